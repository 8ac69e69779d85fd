//! Acceptance gate: one PASS/FAIL line per check, nonzero exit if any
//! check fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxgait::evaluation::{evaluate, EvalConfig, GaitResult};
use voxgait::experiment::aggregate::aggregate;
use voxgait::experiment::runner::load_records;
use voxgait::experiment::Algorithm;
use voxgait::morphology::{build_biped, decode, Genotype, MorphologyConfig};
use voxgait::optimize::{bin_index, Archive, CmaConfig, CmaState, DescriptorBounds, GRID};
use voxgait::sim::{SimConfig, SoftBody, VoxelMaterial};
use voxgait::terrain::{make_terrain, Terrain, TerrainKind, TerrainParams};

const MOMENTUM_DRIFT: f64 = 1e-9;
const ENERGY_STEP_TOL: f64 = 1e-9;
const SETTLE_SPEED: f64 = 1e-3;
const MIRROR_TOL: f64 = 1e-9;
const SPHERE_TOL: f64 = 1e-10;
const SPHERE_BUDGET: u64 = 5000;
const ARCHIVE_OFFERS: usize = 10_000;
const DESCRIPTOR_TOL: f64 = 1e-6;
const DESK_SEED: u64 = 2024;

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, name: &str, outcome: Result<String, String>) {
        let line = match outcome {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                format!("FAIL {name}: {detail}")
            }
        };
        let mut err = std::io::stderr().lock();
        writeln!(err, "{line}").unwrap();
    }
}

fn note(msg: &str) {
    writeln!(std::io::stderr().lock(), "    {msg}").unwrap();
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn biped_on(terrain: &Terrain, clearance: f64) -> voxgait::morphology::Biped {
    let layout = MorphologyConfig::default().layout().unwrap();
    build_biped(&layout, terrain, &VoxelMaterial::default(), clearance).unwrap()
}

fn free_config() -> SimConfig {
    SimConfig { gravity: 0.0, contact_stiffness: 0.0, contact_damping: 0.0, friction_mu: 0.0, ..SimConfig::default() }
}

fn energy(body: &SoftBody, scale: &[f64]) -> f64 {
    body.kinetic_energy() + body.spring_potential(scale)
}

fn physics() -> Result<String, String> {
    let flat = make_terrain(TerrainKind::Flat, &TerrainParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // momentum, actuated, no external forces
    let biped = biped_on(&flat, 0.1);
    let mut body = biped.body.clone();
    for m in &mut body.masses {
        m.velocity.x = 1.0 + rng.random_range(-0.5..0.5);
        m.velocity.y = 0.5 + rng.random_range(-0.5..0.5);
    }
    let params = decode(&Genotype::new([0.9, 0.6, 0.1, 0.5, 0.8]).unwrap(), &MorphologyConfig::default());
    let free = free_config();
    let p0 = body.momentum();
    let mut scale = vec![1.0; body.voxels.len()];
    for k in 0..1000 {
        biped.rest_scale_at(&params, k as f64 * free.dt, &mut scale);
        body.step(&scale, &flat, &free).map_err(|e| e.to_string())?;
    }
    let drift = (body.momentum() - p0).norm() / p0.norm();
    ensure(drift < MOMENTUM_DRIFT, || format!("momentum drift {drift:e}"))?;

    // energy, damped, constant rest lengths
    let mut body = biped.body.clone();
    for m in &mut body.masses {
        m.velocity.x = rng.random_range(-2.0..2.0);
        m.velocity.y = rng.random_range(-2.0..2.0);
    }
    let scale = vec![1.1, 0.9, 1.0, 1.05, 0.95];
    let mut worst = f64::NEG_INFINITY;
    let mut e = energy(&body, &scale);
    for _ in 0..5000 {
        body.step(&scale, &flat, &free).map_err(|e| e.to_string())?;
        let next = energy(&body, &scale);
        worst = worst.max((next - e) / e);
        e = next;
    }
    ensure(worst <= ENERGY_STEP_TOL, || format!("energy rose by {worst:e} relative in one step"))?;

    // settling from a 1-unit drop
    let cfg = SimConfig::default();
    let mut body = biped_on(&flat, 1.0).body;
    let ones = vec![1.0; body.voxels.len()];
    for _ in 0..5000 {
        body.step(&ones, &flat, &cfg).map_err(|e| e.to_string())?;
    }
    let speed = body.max_speed();
    ensure(speed < SETTLE_SPEED, || format!("max speed {speed:e} after 5 s"))?;

    // penetration after settling, every terrain
    let mut worst_pen: f64 = 0.0;
    for kind in TerrainKind::ALL {
        let terrain = make_terrain(kind, &TerrainParams::default()).unwrap();
        let mut body = biped_on(&terrain, 0.1).body;
        for _ in 0..5000 {
            body.step(&ones, &terrain, &cfg).map_err(|e| e.to_string())?;
        }
        let pen = body.max_penetration(&terrain).map_err(|e| e.to_string())?;
        ensure(pen <= cfg.max_penetration_tolerance, || format!("penetration {pen} on {kind}"))?;
        worst_pen = worst_pen.max(pen);
    }

    // mirror trajectory on an asymmetric terrain with actuation
    let saw = make_terrain(TerrainKind::Sawtooth, &TerrainParams::default()).unwrap();
    let saw_m = saw.mirrored(0.0);
    let biped = biped_on(&saw, 0.1);
    let mut a = biped.body.clone();
    let mut b = a.mirrored(0.0);
    let mut scale = vec![1.0; a.voxels.len()];
    let mut mirror_err: f64 = 0.0;
    for k in 0..3000 {
        biped.rest_scale_at(&params, k as f64 * cfg.dt, &mut scale);
        a.step(&scale, &saw, &cfg).map_err(|e| e.to_string())?;
        b.step(&scale, &saw_m, &cfg).map_err(|e| e.to_string())?;
        for (ma, mb) in a.masses.iter().zip(&b.masses) {
            let d = (ma.position.x + mb.position.x)
                .abs()
                .max((ma.position.y - mb.position.y).abs())
                .max((ma.velocity.x + mb.velocity.x).abs())
                .max((ma.velocity.y - mb.velocity.y).abs());
            mirror_err = mirror_err.max(d);
        }
        ensure(mirror_err < MIRROR_TOL, || format!("mirror deviation {mirror_err:e} at step {k}"))?;
    }
    Ok(format!(
        "momentum drift {drift:.1e}, worst energy step {worst:.1e}, settled speed {speed:.1e}, \
         worst penetration {worst_pen:.1e}, mirror deviation {mirror_err:.1e}"
    ))
}

fn sphere(g: &Genotype) -> f64 {
    -g.genes().iter().map(|x| (x - 0.3).powi(2)).sum::<f64>()
}

fn cma_oracle() -> Result<String, String> {
    let mut worst = f64::INFINITY;
    let mut worst_evals = 0;
    for seed in 0..10 {
        let mut s = CmaState::new(&CmaConfig::default(), seed).map_err(|e| e.to_string())?;
        let mut reached = None;
        while s.evaluations() < SPHERE_BUDGET {
            let x = s.ask().map_err(|e| e.to_string())?;
            let told: Vec<_> = x.iter().map(|g| (*g, sphere(g))).collect();
            s.tell(&told).map_err(|e| e.to_string())?;
            if reached.is_none() && s.best().unwrap().1 > -SPHERE_TOL {
                reached = Some(s.evaluations());
            }
        }
        let best = s.best().unwrap().1;
        let at = reached.ok_or_else(|| format!("seed {seed} best {best:e} after {SPHERE_BUDGET} evaluations"))?;
        worst = worst.min(best);
        worst_evals = worst_evals.max(at);
    }
    Ok(format!("10/10 seeds within {SPHERE_TOL:e}; slowest needed {worst_evals} evaluations; worst final {worst:.1e}"))
}

fn archive_properties() -> Result<String, String> {
    let bounds = DescriptorBounds { squish: [0.0, 0.8], wobble: [0.0, 300.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut offers = 0;
    let mut round_trips = 0;
    while offers < ARCHIVE_OFFERS {
        let mut archive = Archive::new(bounds).unwrap();
        let mut oracle: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut last_score = 0.0;
        let mut last_occ = 0;
        for _ in 0..500 {
            let mut genes = [0.0; 5];
            genes.iter_mut().for_each(|v| *v = rng.random::<f64>());
            let g = Genotype::new(genes).unwrap();
            let r = GaitResult {
                fitness: (rng.random_range(0..40) as f64) * 0.05,
                squish: rng.random_range(-0.1..0.9),
                wobble: rng.random_range(-10.0..330.0),
                com_start_x: 0.0,
                com_end_x: 0.0,
                sample_count: 500,
                failed: rng.random_bool(0.05),
            };
            let before: Vec<Option<f64>> =
                (0..GRID * GRID).map(|i| archive.get(i / GRID, i % GRID).map(|e| e.result.fitness)).collect();
            archive.offer(g, r).map_err(|e| e.to_string())?;
            offers += 1;
            if !r.failed {
                let row = ((10.0 * (r.squish - bounds.squish[0]) / (bounds.squish[1] - bounds.squish[0])).floor())
                    .clamp(0.0, 9.0) as usize;
                let col = ((10.0 * (r.wobble - bounds.wobble[0]) / (bounds.wobble[1] - bounds.wobble[0])).floor())
                    .clamp(0.0, 9.0) as usize;
                ensure(bin_index(&r, &bounds).unwrap() == (row, col), || "bin index disagrees with oracle".into())?;
                let cell = oracle.entry((row, col)).or_insert(f64::NEG_INFINITY);
                *cell = cell.max(r.fitness);
            }
            for (i, prev) in before.iter().enumerate() {
                let now = archive.get(i / GRID, i % GRID).map(|e| e.result.fitness);
                ensure(match (prev, now) {
                    (Some(p), Some(n)) => n >= *p,
                    (Some(_), None) => false,
                    _ => true,
                }, || format!("cell {i} fitness decreased"))?;
            }
            for ((row, col), best) in &oracle {
                let held = archive.get(*row, *col).map(|e| e.result.fitness);
                ensure(held == Some(*best), || format!("cell ({row}, {col}) holds {held:?}, max offered {best}"))?;
            }
            let score = archive.qd_score();
            let occ = archive.occupancy();
            ensure(score >= last_score && occ >= last_occ && occ <= GRID * GRID, || {
                format!("qd-score {last_score} -> {score}, occupancy {last_occ} -> {occ}")
            })?;
            ensure(archive.is_consistent(), || "elite outside its own cell".into())?;
            last_score = score;
            last_occ = occ;
        }
        let mut buf = Vec::new();
        archive.write_jsonl(&mut buf, None).map_err(|e| e.to_string())?;
        let (back, _) = Archive::read_jsonl(buf.as_slice()).map_err(|e| e.to_string())?;
        ensure(back == archive, || "serialization round trip changed the archive".into())?;
        round_trips += 1;
    }
    Ok(format!("{offers} randomized offers, {round_trips} lossless round trips, all invariants held"))
}

fn descriptor_sanity() -> Result<String, String> {
    let cfg = EvalConfig::default();
    let flat = make_terrain(TerrainKind::Flat, &TerrainParams::default()).unwrap();
    let still = evaluate(&Genotype::new([0.0, 0.5, 0.2, 0.7, 0.9]).unwrap(), &flat, &cfg);
    ensure(!still.failed && still.squish < DESCRIPTOR_TOL && still.wobble < DESCRIPTOR_TOL, || {
        format!("zero amplitude: squish {:e}, wobble {:e}", still.squish, still.wobble)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let mut genes = [0.0; 5];
        genes.iter_mut().for_each(|v| *v = rng.random::<f64>());
        let g = Genotype::new(genes).unwrap();
        let a = evaluate(&g, &flat, &cfg);
        let b = evaluate(&g.phase_swapped(), &flat, &cfg);
        let d = (a.fitness - b.fitness).abs().max((a.squish - b.squish).abs()).max((a.wobble - b.wobble).abs());
        ensure(d < DESCRIPTOR_TOL, || format!("{g}: phase swap changed results by {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!(
        "zero amplitude squish {:.1e} wobble {:.1e}; 8 phase-swapped pairs differ by at most {worst:.1e}",
        still.squish, still.wobble
    ))
}

fn voxgait(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_voxgait")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("voxgait {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

/// Every file under `root` except wall-clock provenance, keyed by relative path.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "provenance.json") {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn same_artifacts(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (artifacts(a), artifacts(b));
    ensure(fa.keys().eq(fb.keys()), || "runs produced different file sets".into())?;
    for (path, bytes) in &fa {
        ensure(fb[path] == *bytes, || format!("{} differs", path.display()))?;
    }
    Ok(fa.len())
}

fn determinism(scratch: &Path) -> Result<String, String> {
    let mut optimize_files = 0;
    for alg in ["cma", "qda"] {
        let mut dirs = Vec::new();
        for workers in ["1", "8"] {
            let dir = scratch.join(format!("optimize_{alg}_{workers}"));
            let d = dir.to_str().unwrap();
            voxgait(&[
                "optimize", "--preset", "desk", "--seed", "7", "--terrain", "spiky", "--algorithm", alg, "--trial", "3",
                "--workers", workers, "--out", d,
            ])?;
            dirs.push(dir);
        }
        optimize_files += same_artifacts(&dirs[0], &dirs[1])?;
    }
    let mut desk = Vec::new();
    for workers in ["8", "1"] {
        let dir = scratch.join(format!("desk_{workers}"));
        let started = Instant::now();
        voxgait(&["full", "--preset", "desk", "--seed", &DESK_SEED.to_string(), "--workers", workers, "--out", dir.to_str().unwrap()])?;
        note(&format!("desk run with {workers} workers took {:.0} s", started.elapsed().as_secs_f64()));
        desk.push(dir);
    }
    let desk_files = same_artifacts(&desk[0], &desk[1])?;
    Ok(format!(
        "optimize (cma, qda) identical at 1 and 8 workers ({optimize_files} files); \
         desk full run identical at 8 and 1 workers ({desk_files} files)"
    ))
}

fn directional(run: &Path) -> Result<String, String> {
    use Algorithm::{Cma, Qda};
    use TerrainKind::{Flat, Spiky, Valley};
    let records = load_records(run).map_err(|e| e.to_string())?;
    let agg = aggregate(&records).map_err(|e| e.to_string())?;
    for m in &agg.matrices {
        note(&format!("transfer gain matrix, {}:", m.algorithm));
        for line in m.to_csv().lines() {
            note(&format!("  {line}"));
        }
    }
    let mut problems = Vec::new();
    let mut training = Vec::new();
    for t in [Flat, Spiky, Valley] {
        let (c, q) = (agg.mean_training(Cma, t), agg.mean_training(Qda, t));
        training.push(format!("{t} cma {} qda {}", fmt(c), fmt(q)));
        if !matches!((c, q), (Some(c), Some(q)) if c > q) {
            problems.push(format!("(a) {t}: cma {} not above qda {}", fmt(c), fmt(q)));
        }
    }
    let cells = [(Flat, Spiky), (Spiky, Flat), (Valley, Flat), (Valley, Spiky)];
    let mean_loss = |alg| -> Option<f64> {
        let m = agg.matrix(alg)?;
        let gains: Option<Vec<f64>> = cells.iter().map(|&(a, b)| m.get(a, b)).collect();
        gains.map(|g| -g.iter().sum::<f64>() / g.len() as f64)
    };
    let (cl, ql) = (mean_loss(Cma), mean_loss(Qda));
    if !matches!((cl, ql), (Some(c), Some(q)) if c > q) {
        problems.push(format!("(b) mean loss cma {} not above qda {}", fmt(cl), fmt(ql)));
    }
    let sf = agg.matrix(Qda).and_then(|m| m.get(Spiky, Flat));
    if !matches!(sf, Some(g) if g >= 0.0) {
        problems.push(format!("(c) qda spiky->flat mean gain {}", fmt(sf)));
    }
    let detail = format!(
        "training [{}]; mean off-diagonal loss excl. valley target cma {} qda {}; qda spiky->flat gain {}",
        training.join(", "),
        fmt(cl),
        fmt(ql),
        fmt(sf)
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", problems.join("; ")))
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.4}"))
}

fn main() {
    // libtest flags such as --list or a name filter are accepted and ignored
    // except for listing, which must not run anything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut gate = Gate { failures: 0 };
    gate.report("physics invariants", physics());
    gate.report("cma-es sphere oracle", cma_oracle());
    gate.report("archive properties", archive_properties());
    let scratch = tempfile::tempdir().unwrap();
    gate.report("determinism", determinism(scratch.path()));
    let desk = scratch.path().join("desk_8");
    let outcome = if desk.join("results").is_dir() { directional(&desk) } else { Err("no desk run available".into()) };
    gate.report("directional desk-scale results", outcome);
    gate.report("descriptor sanity", descriptor_sanity());
    let total = 6;
    writeln!(
        std::io::stderr().lock(),
        "acceptance: {}/{total} checks passed in {:.0} s",
        total - gate.failures,
        started.elapsed().as_secs_f64()
    )
    .unwrap();
    if gate.failures > 0 {
        std::process::exit(1);
    }
}
