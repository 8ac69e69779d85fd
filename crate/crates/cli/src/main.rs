use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use voxgait::evaluation::evaluate_traced;
use voxgait::experiment::aggregate::aggregate;
use voxgait::experiment::config::{Algorithm, ExperimentConfig, Preset};
use voxgait::experiment::record::TrialRecord;
use voxgait::experiment::runner::{
    load_records, pilot, run_full, run_optimization_phase, run_transfer_phase, trial_seed, worker_pool,
    write_run_header, RunManifest,
};
use voxgait::experiment::TrialSpec;
use voxgait::terrain::{make_terrain, parse_terrain_list, TerrainKind};
use voxgait::Genotype;

/// Gait optimization and transfer experiments for a five-voxel soft biped.
#[derive(Parser)]
#[command(name = "voxgait", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate archive descriptor bounds from random gaits and write a config.
    Pilot(PilotArgs),
    /// Train one algorithm on one terrain for one trial.
    Optimize(OptimizeArgs),
    /// Re-evaluate trained records on the other terrains.
    Transfer(TransferArgs),
    /// Train and transfer every terrain × algorithm × trial, then aggregate.
    Full(FullArgs),
    /// Rebuild transfer matrices and distributions from record files.
    Aggregate(AggregateArgs),
    /// Dump the descriptor trace of one gait as CSV.
    Trace(TraceArgs),
    /// Write a terrain profile as CSV.
    TerrainExport(TerrainExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale preset used when no config file is given: standard or desk.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training evaluations per trial.
    #[arg(long)]
    budget: Option<u64>,
    /// Trials per terrain and algorithm.
    #[arg(long)]
    trials: Option<u32>,
    /// Comma-separated terrain list, e.g. flat,spiky,valley.
    #[arg(long)]
    terrains: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(p)) => ExperimentConfig::preset(p.parse::<Preset>()?),
            (None, None) => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(list) = &self.terrains {
            cfg.terrains = parse_terrain_list(list)?;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct PilotArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Random genotypes to evaluate.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value = "flat")]
    terrain: TerrainKind,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Where to write the config with calibrated bounds.
    #[arg(long, default_value = "voxgait.toml")]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    terrain: TerrainKind,
    #[arg(long)]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 0)]
    trial: u32,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Run directory; the record lands in results/<terrain>/<algorithm>/.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Run directory whose records to complete.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Config file; defaults to the run's own config.toml.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transfer targets; defaults to the config's terrain list.
    #[arg(long)]
    terrains: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct FullArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Five comma-separated genes in [0, 1].
    #[arg(long)]
    genes: Genotype,
    #[arg(long, default_value = "flat")]
    terrain: TerrainKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct TerrainExportArgs {
    #[arg(long)]
    terrain: TerrainKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only vertices with x in [from, to].
    #[arg(long, allow_hyphen_values = true)]
    from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    to: Option<f64>,
    /// Output CSV; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pilot(a) => cmd_pilot(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Full(a) => cmd_full(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Trace(a) => cmd_trace(a),
        Command::TerrainExport(a) => cmd_terrain_export(a),
    }
}

fn load_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn cmd_pilot(a: PilotArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    let seed = cfg.seed;
    let report = worker_pool(a.workers)?.install(|| pilot(a.samples, seed, a.terrain, &cfg))?;
    eprintln!("pilot: {} samples on {} ({} failed)", report.samples, report.terrain, report.failed);
    for (name, table) in [("squish", &report.squish_quantiles), ("wobble", &report.wobble_quantiles)] {
        let cols: Vec<String> = table.iter().map(|(q, v)| format!("q{:.2}={v:.6}", q)).collect();
        eprintln!("  {name}: {}", cols.join(" "));
    }
    cfg.qda.bounds = report.bounds;
    std::fs::write(&a.out, cfg.to_toml()?).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "squish [{}, {}] wobble [{}, {}] -> {}",
        report.bounds.squish[0],
        report.bounds.squish[1],
        report.bounds.wobble[0],
        report.bounds.wobble[1],
        a.out.display()
    );
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    if a.trial >= cfg.trials {
        bail!("--trial {} is outside the configured {} trials", a.trial, cfg.trials);
    }
    write_run_header(&cfg, &a.out)?;
    let spec = TrialSpec {
        terrain: a.terrain,
        algorithm: a.algorithm,
        trial: a.trial,
        seed: trial_seed(cfg.seed, a.terrain, a.algorithm, a.trial),
    };
    let started = Instant::now();
    let record = worker_pool(a.workers)?.install(|| run_optimization_phase(&spec, &cfg))?;
    let path = record.save(&a.out)?;
    println!(
        "{} {} trial {}: best {} over {} evaluations ({:?}) in {:.1} s -> {}",
        spec.terrain,
        spec.algorithm,
        spec.trial,
        record.training.best_fitness().map_or("none".into(), |f| format!("{f:.6}")),
        record.training.evaluations,
        record.training.status,
        started.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let own = a.out.join("config.toml");
            if own.exists() {
                ExperimentConfig::load(&own)?
            } else {
                ExperimentConfig::default()
            }
        }
    };
    if let Some(list) = &a.terrains {
        cfg.terrains = parse_terrain_list(list)?;
    }
    let records = load_records(&a.out)?;
    if records.is_empty() {
        bail!("no trial records under {}", a.out.join("results").display());
    }
    let pool = worker_pool(a.workers)?;
    for mut record in records {
        pool.install(|| run_transfer_phase(&mut record, &cfg.terrains, &cfg))?;
        let path = record.save(&a.out)?;
        let cols: Vec<String> = record.transfers.iter().map(|t| format!("{}={:.6}", t.terrain, t.fitness)).collect();
        println!("{}: {}", path.display(), cols.join(" "));
    }
    Ok(())
}

fn cmd_full(a: FullArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let total = cfg.terrains.len() * cfg.algorithms.len() * cfg.trials as usize;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let started = Instant::now();
    let progress = |r: &TrialRecord| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        eprintln!(
            "[{n}/{total} {:.0} s] {} {} trial {}: training {}",
            started.elapsed().as_secs_f64(),
            r.spec.terrain,
            r.spec.algorithm,
            r.spec.trial,
            r.training.best_fitness().map_or("failed".into(), |f| format!("{f:.4}"))
        );
    };
    let summary = run_full(&cfg, &a.out, a.workers, &progress)?;
    print_matrices(&summary);
    println!("artifacts in {}", a.out.display());
    Ok(())
}

fn print_matrices(summary: &voxgait::experiment::Aggregate) {
    for m in &summary.matrices {
        println!("transfer gain, {} (rows: trained on, columns: evaluated on)", m.algorithm);
        print!("{}", m.to_csv());
    }
    for g in summary.summary.iter().filter(|g| g.train == g.eval) {
        println!(
            "{} on {}: mean training fitness {} ({} ok, {} failed)",
            g.algorithm,
            g.train,
            g.mean.map_or("NA".into(), |v| format!("{v:.4}")),
            g.trials_ok,
            g.trials_failed
        );
    }
}

fn cmd_aggregate(a: AggregateArgs) -> Result<()> {
    let records = load_records(&a.out)?;
    let manifest = a.out.join("manifest.json");
    if manifest.exists() {
        let terrains = RunManifest::load(&manifest)?.config.terrains;
        for r in &records {
            r.check_transfers(&terrains)?;
        }
    }
    let summary = aggregate(&records)?;
    summary.write(&a.out.join("aggregate"))?;
    print_matrices(&summary);
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<()> {
    let cfg = load_or_default(a.config.as_deref())?;
    let terrain = make_terrain(a.terrain, &cfg.terrain)?;
    let mut out = output(&a.out)?;
    writeln!(out, "time,com_x,com_y,diag_distance,pitch")?;
    let mut write_err = None;
    let result = evaluate_traced(&a.genes, &terrain, &cfg.eval, |s| {
        if write_err.is_none() {
            if let Err(e) = writeln!(out, "{},{},{},{},{}", s.time, s.com.x, s.com.y, s.diag_distance, s.pitch) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    out.flush()?;
    if result.failed {
        bail!("simulation became unstable for {}", a.genes);
    }
    eprintln!("fitness {} squish {} wobble {}", result.fitness, result.squish, result.wobble);
    Ok(())
}

fn cmd_terrain_export(a: TerrainExportArgs) -> Result<()> {
    let cfg = load_or_default(a.config.as_deref())?;
    let terrain = make_terrain(a.terrain, &cfg.terrain)?;
    let window = match (a.from, a.to) {
        (None, None) => None,
        (lo, hi) => {
            let lo = lo.unwrap_or(f64::NEG_INFINITY);
            let hi = hi.unwrap_or(f64::INFINITY);
            if lo > hi {
                bail!("--from {lo} exceeds --to {hi}");
            }
            Some((lo, hi))
        }
    };
    let mut out = output(&a.out)?;
    terrain.write_csv(&mut out, window)?;
    out.flush()?;
    Ok(())
}

