//! Optimization and transfer phases, and whole-run orchestration.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::aggregate::{aggregate, Aggregate};
use super::config::{Algorithm, ExperimentConfig};
use super::record::{find_records, write_atomic, TrialRecord, TrialSpec, TrialStatus, Training, TransferEntry};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, GaitResult};
use crate::morphology::{Genotype, GENES};
use crate::optimize::{CmaConstants, CmaState, DescriptorBounds, Elite, QdaState};
use crate::terrain::{make_terrain, Terrain, TerrainKind};

pub const MANIFEST_FORMAT: &str = "voxgait-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Seed for one trial, derived from the master seed by hashing so trials
/// can run in any order or in isolation.
pub fn trial_seed(master: u64, terrain: TerrainKind, algorithm: Algorithm, trial: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(b"voxgait-trial\0");
    h.update(master.to_le_bytes());
    h.update(terrain.as_str().as_bytes());
    h.update([0]);
    h.update(algorithm.as_str().as_bytes());
    h.update([0]);
    h.update(trial.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// All trials of a run, ordered by terrain, algorithm, then trial index.
pub fn trial_specs(cfg: &ExperimentConfig) -> Vec<TrialSpec> {
    let mut specs = Vec::new();
    for &terrain in &cfg.terrains {
        for &algorithm in &cfg.algorithms {
            for trial in 0..cfg.trials {
                specs.push(TrialSpec { terrain, algorithm, trial, seed: trial_seed(cfg.seed, terrain, algorithm, trial) });
            }
        }
    }
    specs
}

/// Evaluate a batch; results come back in candidate order whatever the
/// thread count.
pub fn evaluate_batch(batch: &[Genotype], terrain: &Terrain, cfg: &EvalConfig) -> Vec<GaitResult> {
    batch.par_iter().map(|g| evaluate(g, terrain, cfg)).collect()
}

/// Train one optimizer on one terrain. Optimizer breakdowns produce a
/// record marked failed rather than an error.
pub fn run_optimization_phase(spec: &TrialSpec, cfg: &ExperimentConfig) -> Result<TrialRecord> {
    let terrain = make_terrain(spec.terrain, &cfg.terrain)?;
    let mut training =
        Training { status: TrialStatus::Ok, error: None, evaluations: 0, failed_evaluations: 0, best: None };
    let mut archive = None;
    let outcome = match spec.algorithm {
        Algorithm::Cma => train_cma(spec.seed, &terrain, cfg, &mut training),
        Algorithm::Qda => {
            let mut state = QdaState::new(&cfg.qda, spec.seed)?;
            let r = train_qda(&mut state, &terrain, cfg, &mut training);
            training.best = state.archive().best().copied();
            archive = Some(state.into_archive());
            r
        }
    };
    match outcome {
        Ok(()) => {}
        Err(e @ (Error::Degenerate(_) | Error::Protocol(_))) => {
            training.status = TrialStatus::Failed;
            training.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(TrialRecord { spec: *spec, budget: cfg.budget, training, archive, transfers: Vec::new() })
}

fn tally(training: &mut Training, results: &[GaitResult]) {
    training.evaluations += results.len() as u64;
    training.failed_evaluations += results.iter().filter(|r| r.failed).count() as u64;
}

fn train_cma(seed: u64, terrain: &Terrain, cfg: &ExperimentConfig, training: &mut Training) -> Result<()> {
    let mut state = CmaState::new(&cfg.cma, seed)?;
    for _ in 0..cfg.budget / cfg.cma.population as u64 {
        let batch = state.ask()?;
        let results = evaluate_batch(&batch, terrain, &cfg.eval);
        tally(training, &results);
        for (g, r) in batch.iter().zip(&results) {
            if training.best.is_none_or(|b| r.fitness > b.result.fitness) {
                training.best = Some(Elite { genotype: *g, result: *r });
            }
        }
        let told: Vec<(Genotype, f64)> = batch.iter().zip(&results).map(|(g, r)| (*g, r.fitness)).collect();
        state.tell(&told)?;
    }
    Ok(())
}

fn train_qda(state: &mut QdaState, terrain: &Terrain, cfg: &ExperimentConfig, training: &mut Training) -> Result<()> {
    for _ in 0..cfg.budget / cfg.qda.batch as u64 {
        let batch = state.ask();
        let results = evaluate_batch(&batch, terrain, &cfg.eval);
        tally(training, &results);
        let told: Vec<(Genotype, GaitResult)> = batch.into_iter().zip(results).collect();
        state.tell(&told)?;
    }
    Ok(())
}

/// Re-evaluate a trained record on `target` without further training:
/// the champion once for cma, every elite for qda keeping the maximum.
pub fn transfer_to(record: &TrialRecord, target: &Terrain, cfg: &EvalConfig) -> Result<TransferEntry> {
    let candidates: Vec<Genotype> = match (record.spec.algorithm, &record.archive) {
        (Algorithm::Cma, _) => record.training.best.iter().map(|e| e.genotype).collect(),
        (Algorithm::Qda, Some(archive)) => archive.iter().map(|(_, e)| e.genotype).collect(),
        (Algorithm::Qda, None) => return Err(Error::Format("qda record without an archive".into())),
    };
    let results = evaluate_batch(&candidates, target, cfg);
    Ok(TransferEntry {
        terrain: target.kind,
        fitness: results.iter().map(|r| r.fitness).fold(0.0, f64::max),
        evaluations: results.len() as u64,
        failed_evaluations: results.iter().filter(|r| r.failed).count() as u64,
    })
}

/// Fill in transfers onto every terrain of `terrains` other than the
/// training terrain, replacing any present. Failed trials get none.
pub fn run_transfer_phase(record: &mut TrialRecord, terrains: &[TerrainKind], cfg: &ExperimentConfig) -> Result<()> {
    record.transfers.clear();
    if !record.is_ok() {
        return Ok(());
    }
    for &kind in terrains.iter().filter(|&&k| k != record.spec.terrain) {
        let target = make_terrain(kind, &cfg.terrain)?;
        record.transfers.push(transfer_to(record, &target, &cfg.eval)?);
    }
    Ok(())
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub software_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub cma_constants: CmaConstants,
    pub trials: Vec<TrialSpec>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            software_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: cfg.seed,
            config: cfg.clone(),
            cma_constants: CmaConstants::new(GENES, cfg.cma.population),
            trials: trial_specs(cfg),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("{}: not a v{MANIFEST_VERSION} run manifest", path.display())));
        }
        m.config.validate()?;
        Ok(m)
    }
}

/// Wall-clock bookkeeping, kept apart from the reproducible artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub software_version: String,
    pub workers: usize,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Write the config snapshot and manifest for a run rooted at `out`.
pub fn write_run_header(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let manifest = RunManifest::new(cfg);
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&out.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// Optimize, transfer and save one trial.
pub fn run_trial(spec: &TrialSpec, cfg: &ExperimentConfig, out: &Path) -> Result<TrialRecord> {
    let mut record = run_optimization_phase(spec, cfg)?;
    run_transfer_phase(&mut record, &cfg.terrains, cfg)?;
    record.save(out)?;
    Ok(record)
}

/// The whole protocol: every terrain × algorithm × trial, then aggregation.
/// Artifacts other than `provenance.json` depend only on `cfg`.
pub fn run_full(
    cfg: &ExperimentConfig,
    out: &Path,
    workers: usize,
    progress: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<Aggregate> {
    let started = unix_now();
    let manifest = write_run_header(cfg, out)?;
    let pool = worker_pool(workers)?;
    let records: Vec<TrialRecord> = pool.install(|| {
        manifest
            .trials
            .par_iter()
            .map(|spec| {
                let record = run_trial(spec, cfg, out)?;
                progress(&record);
                Ok(record)
            })
            .collect::<Result<_>>()
    })?;
    let summary = aggregate(&records)?;
    summary.write(&out.join("aggregate"))?;
    let provenance = Provenance {
        software_version: env!("CARGO_PKG_VERSION").into(),
        workers,
        started_unix_s: started,
        finished_unix_s: unix_now(),
    };
    let mut json = serde_json::to_vec_pretty(&provenance)?;
    json.push(b'\n');
    write_atomic(&out.join("provenance.json"), &json)?;
    Ok(summary)
}

/// Load every record under `out/results`.
pub fn load_records(out: &Path) -> Result<Vec<TrialRecord>> {
    find_records(out)?.iter().map(|p| TrialRecord::load(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub terrain: TerrainKind,
    pub seed: u64,
    pub samples: usize,
    pub failed: usize,
    pub squish_quantiles: Vec<(f64, f64)>,
    pub wobble_quantiles: Vec<(f64, f64)>,
    /// [0, p99] per descriptor.
    pub bounds: DescriptorBounds,
}

/// Nearest-rank quantile of sorted data.
pub fn quantile_nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Evaluate `samples` uniform-random genotypes on `terrain` and take the
/// 99th percentile of each descriptor as its upper bin bound.
pub fn pilot(samples: usize, seed: u64, terrain: TerrainKind, cfg: &ExperimentConfig) -> Result<PilotReport> {
    let t = make_terrain(terrain, &cfg.terrain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch: Vec<Genotype> = (0..samples)
        .map(|_| {
            let mut genes = [0.0; GENES];
            for v in &mut genes {
                *v = rng.random::<f64>();
            }
            Genotype::clipped(genes)
        })
        .collect();
    let results = evaluate_batch(&batch, &t, &cfg.eval);
    let ok: Vec<&GaitResult> = results.iter().filter(|r| !r.failed).collect();
    let sorted = |f: fn(&GaitResult) -> f64| {
        let mut v: Vec<f64> = ok.iter().map(|r| f(r)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let squish = sorted(|r| r.squish);
    let wobble = sorted(|r| r.wobble);
    let levels = [0.5, 0.9, 0.95, 0.99, 1.0];
    let table = |v: &[f64]| levels.iter().filter_map(|&q| quantile_nearest_rank(v, q).map(|x| (q, x))).collect();
    let upper = |v: &[f64], name: &str| {
        quantile_nearest_rank(v, 0.99)
            .filter(|&x| x > 0.0)
            .ok_or_else(|| Error::Aggregate(format!("pilot produced no positive {name} p99")))
    };
    let bounds = DescriptorBounds { squish: [0.0, upper(&squish, "squish")?], wobble: [0.0, upper(&wobble, "wobble")?] };
    Ok(PilotReport {
        terrain,
        seed,
        samples,
        failed: results.len() - ok.len(),
        squish_quantiles: table(&squish),
        wobble_quantiles: table(&wobble),
        bounds,
    })
}
