//! Transfer matrices and fitness distributions over completed records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::Algorithm;
use super::record::{write_atomic, TrialRecord};
use crate::error::{Error, Result};
use crate::terrain::TerrainKind;

/// Mean (transfer − training) fitness per (train, eval) terrain pair for one
/// algorithm. The diagonal and pairs without successful trials are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub algorithm: Algorithm,
    pub terrains: Vec<TerrainKind>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl TransferMatrix {
    pub fn get(&self, train: TerrainKind, eval: TerrainKind) -> Option<f64> {
        let i = self.terrains.iter().position(|&t| t == train)?;
        let j = self.terrains.iter().position(|&t| t == eval)?;
        self.cells[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("train\\eval");
        for t in &self.terrains {
            write!(s, ",{t}").unwrap();
        }
        s.push('\n');
        for (i, t) in self.terrains.iter().enumerate() {
            s.push_str(t.as_str());
            for (j, cell) in self.cells[i].iter().enumerate() {
                match cell {
                    _ if i == j => s.push(','),
                    Some(v) => write!(s, ",{v}").unwrap(),
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// One trial's fitness on one terrain; `train == eval` rows are training
/// fitness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionRow {
    pub algorithm: Algorithm,
    pub train: TerrainKind,
    pub eval: TerrainKind,
    pub trial: u32,
    pub fitness: f64,
    pub gain: Option<f64>,
}

/// Box-plot statistics of one (algorithm, train, eval) group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary {
    pub algorithm: Algorithm,
    pub train: TerrainKind,
    pub eval: TerrainKind,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub terrains: Vec<TerrainKind>,
    pub matrices: Vec<TransferMatrix>,
    pub distribution: Vec<DistributionRow>,
    pub summary: Vec<GroupSummary>,
}

impl Aggregate {
    pub fn matrix(&self, algorithm: Algorithm) -> Option<&TransferMatrix> {
        self.matrices.iter().find(|m| m.algorithm == algorithm)
    }

    pub fn group(&self, algorithm: Algorithm, train: TerrainKind, eval: TerrainKind) -> Option<&GroupSummary> {
        self.summary.iter().find(|g| g.algorithm == algorithm && g.train == train && g.eval == eval)
    }

    /// Mean training fitness over successful trials.
    pub fn mean_training(&self, algorithm: Algorithm, terrain: TerrainKind) -> Option<f64> {
        self.group(algorithm, terrain, terrain).and_then(|g| g.mean)
    }

    pub fn distribution_csv(&self) -> String {
        let mut s = String::from("algorithm,train_terrain,eval_terrain,trial,fitness,gain\n");
        for r in &self.distribution {
            let gain = r.gain.map(|g| g.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{},{}", r.algorithm, r.train, r.eval, r.trial, r.fitness, gain).unwrap();
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s =
            String::from("algorithm,train_terrain,eval_terrain,trials_ok,trials_failed,mean,min,q1,median,q3,max\n");
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for g in &self.summary {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                g.algorithm,
                g.train,
                g.eval,
                g.trials_ok,
                g.trials_failed,
                f(g.mean),
                f(g.min),
                f(g.q1),
                f(g.median),
                f(g.q3),
                f(g.max)
            )
            .unwrap();
        }
        s
    }

    /// `transfer_<algorithm>.csv`, `distribution.csv` and `summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for m in &self.matrices {
            write_atomic(&dir.join(format!("transfer_{}.csv", m.algorithm)), m.to_csv().as_bytes())?;
        }
        write_atomic(&dir.join("distribution.csv"), self.distribution_csv().as_bytes())?;
        write_atomic(&dir.join("summary.csv"), self.summary_csv().as_bytes())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Matrices, distributions and summaries over `records`. Terrains and
/// algorithms appear in canonical order; failed trials are counted but
/// excluded from every statistic.
pub fn aggregate(records: &[TrialRecord]) -> Result<Aggregate> {
    let mut by_key: BTreeMap<(Algorithm, TerrainKind, u32), &TrialRecord> = BTreeMap::new();
    for r in records {
        if by_key.insert((r.spec.algorithm, r.spec.terrain, r.spec.trial), r).is_some() {
            return Err(Error::Aggregate(format!(
                "trial {} of {} on {} appears twice",
                r.spec.trial, r.spec.algorithm, r.spec.terrain
            )));
        }
        if r.is_ok() && r.training.best.is_none() {
            return Err(Error::Aggregate(format!(
                "{}/{}/trial_{} succeeded without a best candidate",
                r.spec.terrain, r.spec.algorithm, r.spec.trial
            )));
        }
    }
    let mut terrains: Vec<TerrainKind> = records
        .iter()
        .flat_map(|r| std::iter::once(r.spec.terrain).chain(r.transfers.iter().map(|t| t.terrain)))
        .collect();
    terrains.sort();
    terrains.dedup();
    let mut algorithms: Vec<Algorithm> = records.iter().map(|r| r.spec.algorithm).collect();
    algorithms.sort();
    algorithms.dedup();

    let mut distribution = Vec::new();
    for (&(algorithm, train, trial), r) in &by_key {
        let Some(training) = r.training.best_fitness().filter(|_| r.is_ok()) else { continue };
        for &eval in &terrains {
            if eval == train {
                distribution.push(DistributionRow { algorithm, train, eval, trial, fitness: training, gain: None });
            } else if let Some(t) = r.transfer(eval) {
                distribution.push(DistributionRow {
                    algorithm,
                    train,
                    eval,
                    trial,
                    fitness: t.fitness,
                    gain: Some(t.fitness - training),
                });
            }
        }
    }

    let n = terrains.len();
    let mut matrices = Vec::new();
    let mut summary = Vec::new();
    for &algorithm in &algorithms {
        let mut cells = vec![vec![None; n]; n];
        let mut counts = vec![vec![0; n]; n];
        for (i, &train) in terrains.iter().enumerate() {
            let failed = by_key.iter().filter(|(k, r)| k.0 == algorithm && k.1 == train && !r.is_ok()).count();
            for (j, &eval) in terrains.iter().enumerate() {
                let rows: Vec<&DistributionRow> = distribution
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.train == train && r.eval == eval)
                    .collect();
                let gains: Vec<f64> = rows.iter().filter_map(|r| r.gain).collect();
                counts[i][j] = rows.len();
                if i != j {
                    cells[i][j] = mean(&gains);
                }
                let mut fit: Vec<f64> = rows.iter().map(|r| r.fitness).collect();
                if fit.is_empty() && failed == 0 {
                    continue;
                }
                fit.sort_by(f64::total_cmp);
                summary.push(GroupSummary {
                    algorithm,
                    train,
                    eval,
                    trials_ok: fit.len(),
                    trials_failed: failed,
                    mean: mean(&fit),
                    min: fit.first().copied(),
                    q1: quantile(&fit, 0.25),
                    median: quantile(&fit, 0.5),
                    q3: quantile(&fit, 0.75),
                    max: fit.last().copied(),
                });
            }
        }
        matrices.push(TransferMatrix { algorithm, terrains: terrains.clone(), cells, counts });
    }
    Ok(Aggregate { terrains, matrices, distribution, summary })
}
