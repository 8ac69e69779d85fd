//! MAP-Elites style ask/tell loop over an [`Archive`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::archive::{Archive, DescriptorBounds};
use crate::error::{Error, Result};
use crate::evaluation::GaitResult;
use crate::morphology::{Genotype, GENES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdaConfig {
    pub batch: usize,
    pub mutation_sigma: f64,
    pub init_budget: u64,
    pub bounds: DescriptorBounds,
}

impl Default for QdaConfig {
    fn default() -> Self {
        Self { batch: 20, mutation_sigma: 0.1, init_budget: 100, bounds: DEFAULT_BOUNDS }
    }
}

/// [0, p99] of each descriptor over 1000 uniform-random genotypes on flat
/// terrain with the default simulator and seed 0 (`voxgait pilot`).
/// Re-run the pilot after changing physical constants.
pub const DEFAULT_BOUNDS: DescriptorBounds =
    DescriptorBounds { squish: [0.0, 0.802837196643242], wobble: [0.0, 320.1116183579659] };

impl QdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("qda.batch must be positive".into()));
        }
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma > 0.0) {
            return Err(Error::Config(format!("qda.mutation_sigma must be positive, got {}", self.mutation_sigma)));
        }
        self.bounds.validate().map_err(|e| e.within("qda.bounds"))
    }
}

#[derive(Debug, Clone)]
pub struct QdaState {
    archive: Archive,
    rng: ChaCha8Rng,
    mutation: Normal<f64>,
    batch: usize,
    init_budget: u64,
    asked: u64,
    told: u64,
    pending: Option<Vec<Genotype>>,
}

impl QdaState {
    pub fn new(cfg: &QdaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            archive: Archive::new(cfg.bounds)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mutation: Normal::new(0.0, cfg.mutation_sigma).map_err(|e| Error::Config(e.to_string()))?,
            batch: cfg.batch,
            init_budget: cfg.init_budget,
            asked: 0,
            told: 0,
            pending: None,
        })
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn into_archive(self) -> Archive {
        self.archive
    }

    /// Evaluations told so far.
    pub fn evaluations(&self) -> u64 {
        self.told
    }

    /// Uniform-random candidates during initialization or while the archive
    /// is empty, otherwise mutated copies of uniformly chosen elites.
    pub fn ask(&mut self) -> Vec<Genotype> {
        let elites = self.archive.elites();
        let mut batch = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let g = if self.asked < self.init_budget || elites.is_empty() {
                let mut genes = [0.0; GENES];
                for v in &mut genes {
                    *v = self.rng.random::<f64>();
                }
                Genotype::clipped(genes)
            } else {
                let parent = elites[self.rng.random_range(0..elites.len())].genotype;
                let mut genes = *parent.genes();
                for v in &mut genes {
                    *v += self.mutation.sample(&mut self.rng);
                }
                Genotype::clipped(genes)
            };
            self.asked += 1;
            batch.push(g);
        }
        self.pending = Some(batch.clone());
        batch
    }

    /// Offer every result, in order, to the archive. Returns the number accepted.
    pub fn tell(&mut self, batch: &[(Genotype, GaitResult)]) -> Result<usize> {
        let asked = self.pending.take().ok_or_else(|| Error::Protocol("tell without a pending ask".into()))?;
        if batch.len() != asked.len() || batch.iter().zip(&asked).any(|((g, _), a)| g != a) {
            return Err(Error::Protocol("told candidates differ from the asked batch".into()));
        }
        let mut accepted = 0;
        for &(g, r) in batch {
            if self.archive.offer(g, r)? {
                accepted += 1;
            }
        }
        self.told += batch.len() as u64;
        debug_assert!(self.archive.is_consistent());
        Ok(accepted)
    }
}
