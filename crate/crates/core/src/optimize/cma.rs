//! CMA-ES over the unit box, maximizing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{Genotype, GENES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    pub population: usize,
    pub initial_mean: f64,
    pub initial_sigma: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self { population: 20, initial_mean: 0.5, initial_sigma: 0.3 }
    }
}

impl CmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!("cma.population must be at least 2, got {}", self.population)));
        }
        if !(0.0..=1.0).contains(&self.initial_mean) {
            return Err(Error::Config(format!("cma.initial_mean must lie in [0, 1], got {}", self.initial_mean)));
        }
        if !(self.initial_sigma.is_finite() && self.initial_sigma > 0.0) {
            return Err(Error::Config(format!("cma.initial_sigma must be positive, got {}", self.initial_sigma)));
        }
        Ok(())
    }
}

/// Strategy constants for a given dimension and population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaConstants {
    pub dimension: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaConstants {
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self { dimension: n, lambda, mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

#[derive(Debug, Clone)]
pub struct CmaState {
    constants: CmaConstants,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: u64,
    evaluations: u64,
    rng: ChaCha8Rng,
    pending: Option<Vec<Genotype>>,
    best: Option<(Genotype, f64)>,
}

impl CmaState {
    pub fn new(cfg: &CmaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = GENES;
        Ok(Self {
            constants: CmaConstants::new(n, cfg.population),
            mean: DVector::from_element(n, cfg.initial_mean),
            sigma: cfg.initial_sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
            best: None,
        })
    }

    pub fn constants(&self) -> &CmaConstants {
        &self.constants
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Best candidate told so far.
    pub fn best(&self) -> Option<(Genotype, f64)> {
        self.best
    }

    /// Sample `population` candidates from N(mean, sigma² C), clipped into
    /// the unit box. Asking again before telling discards the earlier batch.
    pub fn ask(&mut self) -> Result<Vec<Genotype>> {
        let n = self.constants.dimension;
        let mut batch = Vec::with_capacity(self.constants.lambda);
        for _ in 0..self.constants.lambda {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
            let y = &self.basis * z.component_mul(&self.scales);
            let x = &self.mean + y * self.sigma;
            let mut genes = [0.0; GENES];
            genes.copy_from_slice(x.as_slice());
            batch.push(Genotype::clipped(genes));
        }
        self.pending = Some(batch.clone());
        Ok(batch)
    }

    /// Update from the asked batch with its fitnesses, in ask order.
    pub fn tell(&mut self, batch: &[(Genotype, f64)]) -> Result<()> {
        let asked = self.pending.as_ref().ok_or_else(|| Error::Protocol("tell without a pending ask".into()))?;
        if batch.len() != asked.len() {
            return Err(Error::Protocol(format!("told {} candidates, asked {}", batch.len(), asked.len())));
        }
        if batch.iter().zip(asked).any(|((g, _), a)| g != a) {
            return Err(Error::Protocol("told candidates differ from the asked batch".into()));
        }
        if let Some((_, f)) = batch.iter().find(|(_, f)| !f.is_finite()) {
            return Err(Error::Protocol(format!("non-finite fitness {f}")));
        }
        self.pending = None;
        self.update(batch)?;
        self.generation += 1;
        self.evaluations += batch.len() as u64;
        for &(g, f) in batch {
            if self.best.is_none_or(|(_, b)| f > b) {
                self.best = Some((g, f));
            }
        }
        Ok(())
    }

    fn update(&mut self, batch: &[(Genotype, f64)]) -> Result<()> {
        let k = &self.constants;
        let n = k.dimension;
        let nf = n as f64;

        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| batch[b].1.total_cmp(&batch[a].1).then(a.cmp(&b)));

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..k.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(batch[i].0.genes()) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in k.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w
        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d)) * self.basis.transpose();
        self.p_sigma = &self.p_sigma * (1.0 - k.c_sigma) + inv_sqrt * &y_w * (k.c_sigma * (2.0 - k.c_sigma) * k.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - k.c_sigma).powi(2 * (self.generation as i32 + 1));
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (nf + 1.0)) * k.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - k.c_c) + &y_w * (h * (k.c_c * (2.0 - k.c_c) * k.mu_eff).sqrt());

        let delta = (1.0 - h) * k.c_c * (2.0 - k.c_c);
        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in k.weights.iter().zip(&steps) {
            rank_mu += y * y.transpose() * *w;
        }
        self.cov = &self.cov * (1.0 + k.c_1 * delta - k.c_1 - k.c_mu)
            + &self.p_c * self.p_c.transpose() * k.c_1
            + rank_mu * k.c_mu;

        self.sigma *= ((k.c_sigma / k.d_sigma) * (ps_norm / k.chi_n - 1.0)).exp();
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Degenerate(format!("step size became {}", self.sigma)));
        }
        self.decompose()
    }

    /// Eigen-decompose C, repairing asymmetry and tiny or negative
    /// eigenvalues.
    fn decompose(&mut self) -> Result<()> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("covariance has non-finite entries".into()));
        }
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
            .ok_or_else(|| Error::Degenerate("covariance eigen-decomposition did not converge".into()))?;
        let top = eig.eigenvalues.max();
        if !(top.is_finite() && top > 0.0) {
            return Err(Error::Degenerate(format!("covariance largest eigenvalue {top}")));
        }
        let floor = top * 1e-14;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        self.cov = (&rebuilt + rebuilt.transpose()) * 0.5;
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        Ok(())
    }
}
