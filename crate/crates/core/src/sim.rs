//! Deterministic 2D mass-spring soft-body simulation.
//!
//! A voxel is a square of four corner masses joined by four edge springs and
//! two diagonal springs. Voxels placed on a grid share corner masses and
//! edge springs with their neighbours. Actuation scales the rest length of
//! every spring a voxel owns; an edge shared by two voxels uses the
//! weighted blend of their scale factors.
//!
//! Integration is semi-implicit Euler: `v += a * dt`, then `p += v * dt`.
//! Ground contact is a penalty spring-damper along the terrain normal with
//! Coulomb friction along the tangent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::Terrain;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub position: Vec2,
    pub velocity: Vec2,
    pub mass: f64,
}

/// How strongly each owning voxel's scale factor drives a spring's rest length.
///
/// Effective scale is `1 + Σ weight_k * (scale_k - 1)`. Unused slots carry
/// weight 0; the weight sum is the spring's actuation gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub voxels: [usize; 2],
    pub weights: [f64; 2],
}

impl Actuation {
    pub const PASSIVE: Actuation = Actuation { voxels: [0, 0], weights: [0.0, 0.0] };

    pub fn gain(&self) -> f64 {
        self.weights[0] + self.weights[1]
    }

    #[inline]
    fn scale(&self, rest_scale: &[f64]) -> f64 {
        // the two owner terms are summed first so the result does not
        // depend on which owner occupies which slot
        let mut blend = 0.0;
        for (&v, &w) in self.voxels.iter().zip(&self.weights) {
            if w != 0.0 {
                blend += w * (rest_scale[v] - 1.0);
            }
        }
        1.0 + blend
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub endpoints: (usize, usize),
    pub rest_length_base: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub actuation: Actuation,
}

impl Spring {
    #[inline]
    pub fn rest_length(&self, rest_scale: &[f64]) -> f64 {
        self.rest_length_base * self.actuation.scale(rest_scale)
    }
}

/// Corner masses (SW, SE, NE, NW) and springs (S, E, N, W edges, then the
/// SW-NE and SE-NW diagonals) of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voxel {
    pub cell: (i32, i32),
    pub corners: [usize; 4],
    pub springs: [usize; 6],
}

/// Springs incident to one mass whose rest-pose directions are mirror
/// images of each other (same `dy`, opposite `dx`). Their contributions are
/// added together before joining the mass total, which makes the force sum
/// bit-exact under left/right reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MirrorGroup {
    springs: [usize; 2],
    signs: [f64; 2],
    len: u8,
}

#[derive(Debug, Clone)]
pub struct SoftBody {
    pub masses: Vec<PointMass>,
    pub springs: Vec<Spring>,
    pub voxels: Vec<Voxel>,
    pub time: f64,
    /// Per mass, a range into `groups`.
    incidence: Vec<(usize, usize)>,
    groups: Vec<MirrorGroup>,
    scratch: Vec<Vec2>,
    spring_scratch: Vec<Vec2>,
    /// Last terrain segment seen under each mass.
    segment_hints: Vec<usize>,
}

/// Physical constants of the voxel material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelMaterial {
    pub corner_mass: f64,
    pub edge_stiffness: f64,
    pub diagonal_stiffness: f64,
    pub damping: f64,
}

impl Default for VoxelMaterial {
    fn default() -> Self {
        Self { corner_mass: 1.0, edge_stiffness: 5000.0, diagonal_stiffness: 2500.0, damping: 10.0 }
    }
}

impl VoxelMaterial {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("body.corner_mass", self.corner_mass),
            ("body.edge_stiffness", self.edge_stiffness),
            ("body.diagonal_stiffness", self.diagonal_stiffness),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::Config(format!(
                "body.damping must be finite and >= 0, got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_mu: f64,
    pub max_penetration_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            gravity: 9.81,
            contact_stiffness: 50_000.0,
            contact_damping: 50.0,
            friction_mu: 0.8,
            max_penetration_tolerance: 0.02,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("sim.dt must be finite and > 0, got {}", self.dt)));
        }
        let non_negative = [
            ("sim.gravity", self.gravity),
            ("sim.contact_stiffness", self.contact_stiffness),
            ("sim.contact_damping", self.contact_damping),
            ("sim.friction_mu", self.friction_mu),
            ("sim.max_penetration_tolerance", self.max_penetration_tolerance),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Assembles voxels on an integer grid into a [`SoftBody`], sharing corners
/// and deduplicating coincident edge springs.
#[derive(Debug, Clone)]
pub struct VoxelGridBuilder {
    edge: f64,
    material: VoxelMaterial,
    cells: Vec<(i32, i32)>,
}

#[derive(PartialEq, Eq, PartialOrd, Ord, Clone, Copy)]
struct EdgeKey((i32, i32), (i32, i32));

impl EdgeKey {
    fn new(a: (i32, i32), b: (i32, i32)) -> Self {
        if a <= b {
            EdgeKey(a, b)
        } else {
            EdgeKey(b, a)
        }
    }
}

impl VoxelGridBuilder {
    pub fn new(edge: f64, material: VoxelMaterial) -> Self {
        Self { edge, material, cells: Vec::new() }
    }

    /// Add the voxel whose SW corner sits at grid point `(col, row)`.
    pub fn voxel(mut self, col: i32, row: i32) -> Self {
        self.cells.push((col, row));
        self
    }

    pub fn build(self) -> Result<SoftBody> {
        if !(self.edge.is_finite() && self.edge > 0.0) {
            return Err(Error::Construction(format!("voxel edge must be > 0, got {}", self.edge)));
        }
        self.material.validate()?;
        if self.cells.is_empty() {
            return Err(Error::Construction("no voxels".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if self.cells[..i].contains(c) {
                return Err(Error::Construction(format!("voxel {c:?} placed twice")));
            }
        }

        let mut corner_ids: BTreeMap<(i32, i32), usize> = BTreeMap::new();
        let mut masses = Vec::new();
        let mut corner = |p: (i32, i32), masses: &mut Vec<PointMass>| -> usize {
            *corner_ids.entry(p).or_insert_with(|| {
                masses.push(PointMass {
                    position: Vec2::new(p.0 as f64 * self.edge, p.1 as f64 * self.edge),
                    velocity: Vec2::ZERO,
                    mass: self.material.corner_mass,
                });
                masses.len() - 1
            })
        };

        let mut edge_ids: BTreeMap<EdgeKey, usize> = BTreeMap::new();
        let mut springs: Vec<Spring> = Vec::new();
        let mut voxels = Vec::with_capacity(self.cells.len());
        let diag = self.edge * std::f64::consts::SQRT_2;

        for (vi, &(c, r)) in self.cells.iter().enumerate() {
            let pts = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
            let corners = pts.map(|p| corner(p, &mut masses));
            let mut owned = [0usize; 6];
            for k in 0..4 {
                let key = EdgeKey::new(pts[k], pts[(k + 1) % 4]);
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                owned[k] = match edge_ids.get(&key) {
                    Some(&si) => {
                        let s = &mut springs[si];
                        s.actuation = Actuation {
                            voxels: [s.actuation.voxels[0], vi],
                            weights: [0.5, 0.5],
                        };
                        si
                    }
                    None => {
                        springs.push(Spring {
                            endpoints: (a.min(b), a.max(b)),
                            rest_length_base: self.edge,
                            stiffness: self.material.edge_stiffness,
                            damping: self.material.damping,
                            actuation: Actuation { voxels: [vi, vi], weights: [1.0, 0.0] },
                        });
                        edge_ids.insert(key, springs.len() - 1);
                        springs.len() - 1
                    }
                };
            }
            for (k, (a, b)) in [(corners[0], corners[2]), (corners[1], corners[3])].into_iter().enumerate()
            {
                springs.push(Spring {
                    endpoints: (a.min(b), a.max(b)),
                    rest_length_base: diag,
                    stiffness: self.material.diagonal_stiffness,
                    damping: self.material.damping,
                    actuation: Actuation { voxels: [vi, vi], weights: [1.0, 0.0] },
                });
                owned[4 + k] = springs.len() - 1;
            }
            voxels.push(Voxel { cell: (c, r), corners, springs: owned });
        }

        let body = SoftBody::new(masses, springs, voxels);
        if !body.is_connected() {
            return Err(Error::Construction("voxels do not form a connected body".into()));
        }
        Ok(body)
    }
}

impl SoftBody {
    /// Assemble a body. Spring summation order is derived from the current
    /// positions, which should be the rest pose.
    pub fn new(masses: Vec<PointMass>, springs: Vec<Spring>, voxels: Vec<Voxel>) -> Self {
        let (incidence, groups) = mirror_groups(&masses, &springs);
        Self {
            scratch: vec![Vec2::ZERO; masses.len()],
            spring_scratch: vec![Vec2::ZERO; springs.len()],
            segment_hints: vec![0; masses.len()],
            masses,
            springs,
            voxels,
            time: 0.0,
            incidence,
            groups,
        }
    }

    fn is_connected(&self) -> bool {
        let n = self.masses.len();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for s in &self.springs {
            adj[s.endpoints.0].push(s.endpoints.1);
            adj[s.endpoints.1].push(s.endpoints.0);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|m| m.mass).sum()
    }

    /// Mass-weighted centre.
    pub fn center_of_mass(&self) -> Vec2 {
        let mut acc = Vec2::ZERO;
        let mut total = 0.0;
        for m in &self.masses {
            acc += m.position * m.mass;
            total += m.mass;
        }
        acc * (1.0 / total)
    }

    pub fn momentum(&self) -> Vec2 {
        self.masses.iter().fold(Vec2::ZERO, |acc, m| acc + m.velocity * m.mass)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.masses.iter().map(|m| 0.5 * m.mass * m.velocity.norm_sq()).sum()
    }

    pub fn spring_potential(&self, rest_scale: &[f64]) -> f64 {
        self.springs
            .iter()
            .map(|s| {
                let (a, b) = s.endpoints;
                let stretch =
                    (self.masses[b].position - self.masses[a].position).norm() - s.rest_length(rest_scale);
                0.5 * s.stiffness * stretch * stretch
            })
            .sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.masses.iter().map(|m| m.velocity.norm()).fold(0.0, f64::max)
    }

    /// Deepest vertical penetration below the terrain (0 when nothing is below).
    pub fn max_penetration(&self, terrain: &Terrain) -> Result<f64> {
        let mut worst = 0.0f64;
        for m in &self.masses {
            worst = worst.max(terrain.height_at(m.position.x)? - m.position.y);
        }
        Ok(worst)
    }

    pub fn translate(&mut self, by: Vec2) {
        for m in &mut self.masses {
            m.position += by;
        }
    }

    /// Reflection about `x = axis` with x-velocities negated.
    pub fn mirrored(&self, axis: f64) -> SoftBody {
        let mut out = self.clone();
        for m in &mut out.masses {
            m.position = m.position.mirror_x(axis);
            m.velocity.x = -m.velocity.x;
        }
        out
    }

    fn check_finite(&self) -> bool {
        self.masses.iter().all(|m| m.position.is_finite() && m.velocity.is_finite())
    }

    /// Advance by one `config.dt`.
    pub fn step(&mut self, rest_scale: &[f64], terrain: &Terrain, config: &SimConfig) -> Result<()> {
        let mut forces = std::mem::take(&mut self.scratch);
        let mut spring_forces = std::mem::take(&mut self.spring_scratch);
        let mut hints = std::mem::take(&mut self.segment_hints);
        forces.resize(self.masses.len(), Vec2::ZERO);
        let res =
            accumulate_forces_into(self, rest_scale, terrain, config, &mut forces, &mut spring_forces, &mut hints);
        self.spring_scratch = spring_forces;
        self.segment_hints = hints;
        if let Err(e) = res {
            self.scratch = forces;
            return Err(match e {
                Error::NonFiniteState { time } => Error::Unstable { time },
                other => other,
            });
        }
        let dt = config.dt;
        for (m, f) in self.masses.iter_mut().zip(&forces) {
            m.velocity += *f * (dt / m.mass);
            m.position += m.velocity * dt;
        }
        self.scratch = forces;
        self.time += dt;
        if !self.check_finite() {
            return Err(Error::Unstable { time: self.time });
        }
        Ok(())
    }
}

/// Springs incident on one mass, keyed by quantized rest offset `(dy, |dx|)`.
type OffsetGroups = BTreeMap<(i64, i64), Vec<(usize, f64)>>;

fn mirror_groups(masses: &[PointMass], springs: &[Spring]) -> (Vec<(usize, usize)>, Vec<MirrorGroup>) {
    const QUANTUM: f64 = 1e-9;
    let mut per_mass: Vec<OffsetGroups> = vec![BTreeMap::new(); masses.len()];
    for (si, s) in springs.iter().enumerate() {
        let (a, b) = s.endpoints;
        for (me, other, sign) in [(a, b, 1.0), (b, a, -1.0)] {
            let d = masses[other].position - masses[me].position;
            let key = ((d.y / QUANTUM).round() as i64, (d.x.abs() / QUANTUM).round() as i64);
            per_mass[me].entry(key).or_default().push((si, sign));
        }
    }
    let mut incidence = Vec::with_capacity(masses.len());
    let mut groups = Vec::new();
    for buckets in per_mass {
        let start = groups.len();
        for members in buckets.into_values() {
            for chunk in members.chunks(2) {
                let mut g = MirrorGroup { springs: [chunk[0].0; 2], signs: [chunk[0].1, 0.0], len: 1 };
                if let Some(&(si, sign)) = chunk.get(1) {
                    g.springs[1] = si;
                    g.signs[1] = sign;
                    g.len = 2;
                }
                groups.push(g);
            }
        }
        incidence.push((start, groups.len()));
    }
    (incidence, groups)
}

/// Net force on every mass: springs, gravity, then ground contact.
pub fn accumulate_forces(
    body: &SoftBody,
    rest_scale: &[f64],
    terrain: &Terrain,
    config: &SimConfig,
) -> Result<Vec<Vec2>> {
    let mut out = vec![Vec2::ZERO; body.masses.len()];
    accumulate_forces_into(body, rest_scale, terrain, config, &mut out, &mut Vec::new(), &mut Vec::new())?;
    Ok(out)
}

fn accumulate_forces_into(
    body: &SoftBody,
    rest_scale: &[f64],
    terrain: &Terrain,
    config: &SimConfig,
    forces: &mut [Vec2],
    spring_forces: &mut Vec<Vec2>,
    hints: &mut Vec<usize>,
) -> Result<()> {
    if rest_scale.len() != body.voxels.len() {
        return Err(Error::Config(format!(
            "rest_scale has {} entries for {} voxels",
            rest_scale.len(),
            body.voxels.len()
        )));
    }
    if let Some(s) = rest_scale.iter().find(|s| !(**s > 0.0 && **s < 2.0)) {
        return Err(Error::Config(format!("rest scale {s} outside (0, 2)")));
    }
    if !body.check_finite() {
        return Err(Error::NonFiniteState { time: body.time });
    }

    let masses = &body.masses;
    // force each spring exerts on its first endpoint
    spring_forces.resize(body.springs.len(), Vec2::ZERO);
    for (out, s) in spring_forces.iter_mut().zip(&body.springs) {
        let (a, b) = s.endpoints;
        let d = masses[b].position - masses[a].position;
        let len = d.norm();
        if len == 0.0 {
            *out = Vec2::ZERO;
            continue;
        }
        let axis = d * (1.0 / len);
        let rel_v = (masses[b].velocity - masses[a].velocity).dot(axis);
        let tension = s.stiffness * (len - s.rest_length(rest_scale)) + s.damping * rel_v;
        *out = axis * tension;
    }

    for ((f, m), &(start, end)) in forces.iter_mut().zip(masses).zip(&body.incidence) {
        let mut total = Vec2::new(0.0, -m.mass * config.gravity);
        for g in &body.groups[start..end] {
            let mut pair = spring_forces[g.springs[0]] * g.signs[0];
            if g.len == 2 {
                pair += spring_forces[g.springs[1]] * g.signs[1];
            }
            total += pair;
        }
        *f = total;
    }

    if config.contact_stiffness > 0.0 {
        hints.resize(masses.len(), 0);
        for ((f, m), hint) in forces.iter_mut().zip(masses).zip(hints.iter_mut()) {
            let (h, normal) = terrain.surface_near(m.position.x, hint)?;
            let below = h - m.position.y;
            if below <= 0.0 {
                continue;
            }
            // distance to the segment line along its normal
            let depth = below * normal.y;
            let push = config.contact_stiffness * depth - config.contact_damping * m.velocity.dot(normal);
            let push = push.max(0.0);
            let tangent = Vec2::new(normal.y, -normal.x);
            // Force that would cancel tangential velocity this step, limited by the cone.
            let want = -(m.mass * m.velocity.dot(tangent) / config.dt + f.dot(tangent));
            let limit = config.friction_mu * push;
            let friction = want.clamp(-limit, limit);
            *f += normal * push + tangent * friction;
        }
    }
    Ok(())
}
