//! Scoring a single gait: absolute horizontal speed plus the squish and
//! wobble behaviour descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{build_biped, decode, Biped, Genotype, MorphologyConfig};
use crate::sim::{SimConfig, SoftBody, VoxelMaterial};
use crate::terrain::Terrain;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitResult {
    pub fitness: f64,
    pub squish: f64,
    pub wobble: f64,
    pub com_start_x: f64,
    pub com_end_x: f64,
    pub sample_count: usize,
    pub failed: bool,
}

impl GaitResult {
    fn failure() -> Self {
        GaitResult {
            fitness: 0.0,
            squish: 0.0,
            wobble: 0.0,
            com_start_x: 0.0,
            com_end_x: 0.0,
            sample_count: 0,
            failed: true,
        }
    }

    pub fn descriptors(&self) -> [f64; 2] {
        [self.squish, self.wobble]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Scored window length in seconds.
    pub duration: f64,
    /// Unactuated settling before the scored window.
    pub settle_time: f64,
    pub descriptor_sample_rate: f64,
    pub sim: SimConfig,
    pub body: VoxelMaterial,
    pub morphology: MorphologyConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            duration: 25.0,
            settle_time: 1.0,
            descriptor_sample_rate: 20.0,
            sim: SimConfig::default(),
            body: VoxelMaterial::default(),
            morphology: MorphologyConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("eval.duration must be > 0, got {}", self.duration)));
        }
        if !(self.settle_time.is_finite() && self.settle_time >= 0.0) {
            return Err(Error::Config(format!("eval.settle_time must be >= 0, got {}", self.settle_time)));
        }
        if !(self.descriptor_sample_rate.is_finite() && self.descriptor_sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "eval.descriptor_sample_rate must be > 0, got {}",
                self.descriptor_sample_rate
            )));
        }
        self.sim.validate().map_err(|e| e.within("eval"))?;
        self.body.validate().map_err(|e| e.within("eval"))?;
        self.morphology.validate().map_err(|e| e.within("eval"))
    }

    fn steps(&self, seconds: f64) -> usize {
        (seconds / self.sim.dt).round() as usize
    }

    fn sample_stride(&self) -> usize {
        ((1.0 / (self.descriptor_sample_rate * self.sim.dt)).round() as usize).max(1)
    }
}

/// Net displacement below which a gait has no direction of travel.
const STATIONARY: f64 = 1e-9;

/// One descriptor sample of the scored window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub com: Vec2,
    pub diag_distance: f64,
    pub pitch: f64,
}

/// Population variance (divide by N).
pub fn variance(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    Ok(samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n)
}

/// Rotation angle of the least-squares rigid fit taking the centred rest
/// pose onto the centred current pose.
pub fn rigid_fit_angle(rest: &[Vec2], body: &SoftBody) -> f64 {
    let total = body.total_mass();
    let mut rest_c = Vec2::ZERO;
    for (p, m) in rest.iter().zip(&body.masses) {
        rest_c += *p * m.mass;
    }
    let rest_c = rest_c * (1.0 / total);
    let cur_c = body.center_of_mass();
    let (mut s_dot, mut s_cross) = (0.0, 0.0);
    for (p, m) in rest.iter().zip(&body.masses) {
        let a = *p - rest_c;
        let b = m.position - cur_c;
        s_dot += m.mass * a.dot(b);
        s_cross += m.mass * a.cross(b);
    }
    s_cross.atan2(s_dot)
}

/// Shift `angle` by whole turns to lie within π of `previous`.
fn unwrap(angle: f64, previous: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = angle;
    while a - previous > PI {
        a -= TAU;
    }
    while a - previous < -PI {
        a += TAU;
    }
    a
}

/// Evaluate a gait. Unstable simulations yield a failed, zero-scored result.
pub fn evaluate(g: &Genotype, terrain: &Terrain, cfg: &EvalConfig) -> GaitResult {
    evaluate_traced(g, terrain, cfg, |_| {})
}

/// As [`evaluate`], calling `on_sample` for every descriptor sample.
pub fn evaluate_traced(
    g: &Genotype,
    terrain: &Terrain,
    cfg: &EvalConfig,
    on_sample: impl FnMut(&TraceSample),
) -> GaitResult {
    match run(g, terrain, cfg, on_sample) {
        Ok(r) => r,
        Err(_) => GaitResult::failure(),
    }
}

fn run(
    g: &Genotype,
    terrain: &Terrain,
    cfg: &EvalConfig,
    mut on_sample: impl FnMut(&TraceSample),
) -> Result<GaitResult> {
    let layout = cfg.morphology.layout()?;
    let Biped { mut body, voxel_column, sw_mass, ne_mass, se_mass, nw_mass, rest_positions } =
        build_biped(&layout, terrain, &cfg.body, cfg.morphology.spawn_clearance)?;
    let params = decode(g, &cfg.morphology);

    let mut scale = vec![1.0; voxel_column.len()];
    for _ in 0..cfg.steps(cfg.settle_time) {
        body.step(&scale, terrain, &cfg.sim)?;
    }

    let com_start = body.center_of_mass();
    let total_steps = cfg.steps(cfg.duration);
    let stride = cfg.sample_stride();
    let capacity = total_steps / stride + 1;
    let mut rising = Vec::with_capacity(capacity);
    let mut falling = Vec::with_capacity(capacity);
    let mut pitch = Vec::with_capacity(capacity);
    let mut com = Vec::with_capacity(capacity);
    let mut last_pitch = rigid_fit_angle(&rest_positions, &body);

    for k in 1..=total_steps {
        let t = (k - 1) as f64 * cfg.sim.dt;
        let cols = params.column_scales(t);
        for (s, &c) in scale.iter_mut().zip(&voxel_column) {
            *s = cols[c];
        }
        body.step(&scale, terrain, &cfg.sim)?;
        if k % stride == 0 {
            let p = |i: usize| body.masses[i].position;
            rising.push((p(ne_mass) - p(sw_mass)).norm());
            falling.push((p(nw_mass) - p(se_mass)).norm());
            let a = unwrap(rigid_fit_angle(&rest_positions, &body), last_pitch);
            last_pitch = a;
            pitch.push(a);
            com.push((k, body.center_of_mass()));
        }
    }

    let com_end = body.center_of_mass();
    let shift = com_end.x - com_start.x;
    // The rear-bottom to front-top diagonal in the direction of travel: the
    // SW-NE pair when moving right, its mirror image when moving left.
    let diag: Vec<f64> = if shift > STATIONARY {
        rising
    } else if shift < -STATIONARY {
        falling
    } else {
        rising.iter().zip(&falling).map(|(a, b)| 0.5 * (a + b)).collect()
    };
    for ((&(k, c), &d), &a) in com.iter().zip(&diag).zip(&pitch) {
        on_sample(&TraceSample { time: k as f64 * cfg.sim.dt, com: c, diag_distance: d, pitch: a });
    }
    let squish = variance(&diag)?;
    let wobble = variance(&pitch)?;
    let fitness = shift.abs() / cfg.duration;
    if !(fitness.is_finite() && squish.is_finite() && wobble.is_finite()) {
        return Err(Error::Unstable { time: body.time });
    }
    Ok(GaitResult {
        fitness,
        squish,
        wobble,
        com_start_x: com_start.x,
        com_end_x: com_end.x,
        sample_count: diag.len(),
        failed: false,
    })
}
