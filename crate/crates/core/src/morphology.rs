//! The five-voxel biped and its open-loop sinusoidal controller.
//!
//! Default occupancy (columns left to right, rows bottom to top):
//!
//! ```text
//!   row 1   [L][M][R]
//!   row 0   [L]   [R]
//! ```
//!
//! Each column oscillates with its own phase; amplitude and frequency are
//! shared by all voxels.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SoftBody, VoxelGridBuilder, VoxelMaterial};
use crate::terrain::Terrain;
use crate::vec2::Vec2;

pub const GENES: usize = 5;
pub const COLUMNS: usize = 3;

/// Gene order: amplitude, frequency, phase of left, middle and right column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; GENES]", into = "[f64; GENES]")]
pub struct Genotype([f64; GENES]);

impl Genotype {
    pub fn new(genes: [f64; GENES]) -> Result<Self> {
        for (i, g) in genes.iter().enumerate() {
            if !(0.0..=1.0).contains(g) {
                return Err(Error::Validation(format!("gene {i} = {g} outside [0, 1]")));
            }
        }
        Ok(Self(genes))
    }

    pub fn from_slice(genes: &[f64]) -> Result<Self> {
        let arr: [f64; GENES] = genes
            .try_into()
            .map_err(|_| Error::Validation(format!("expected {GENES} genes, got {}", genes.len())))?;
        Self::new(arr)
    }

    /// Clip every coordinate into `[0, 1]`. NaN maps to 0.5.
    pub fn clipped(genes: [f64; GENES]) -> Self {
        Self(genes.map(|g| if g.is_nan() { 0.5 } else { g.clamp(0.0, 1.0) }))
    }

    pub fn genes(&self) -> &[f64; GENES] {
        &self.0
    }

    /// Same gait with left and right column phases exchanged.
    pub fn phase_swapped(&self) -> Self {
        let mut g = self.0;
        g.swap(2, 4);
        Self(g)
    }
}

impl TryFrom<[f64; GENES]> for Genotype {
    type Error = Error;
    fn try_from(genes: [f64; GENES]) -> Result<Self> {
        Genotype::new(genes)
    }
}

impl From<Genotype> for [f64; GENES] {
    fn from(g: Genotype) -> Self {
        g.0
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|g| format!("{g:?}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for Genotype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let genes = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Validation(format!("`{p}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Genotype::from_slice(&genes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub column_phase: [f64; COLUMNS],
}

impl ControlParams {
    /// Scale factor of each column at time `t`.
    #[inline]
    pub fn column_scales(&self, t: f64) -> [f64; COLUMNS] {
        let w = TAU * self.frequency * t;
        self.column_phase.map(|p| 1.0 + self.amplitude * (w + p).sin())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphologyConfig {
    pub amplitude_max: f64,
    pub frequency_min: f64,
    pub frequency_max: f64,
    pub voxel_edge: f64,
    pub spawn_x: f64,
    pub spawn_clearance: f64,
    /// Occupied `[column, row]` cells; column selects the phase gene.
    pub cells: Vec<[i32; 2]>,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            amplitude_max: 0.25,
            frequency_min: 0.25,
            frequency_max: 4.0,
            voxel_edge: 1.0,
            spawn_x: 0.0,
            spawn_clearance: 0.1,
            cells: vec![[0, 0], [0, 1], [1, 1], [2, 0], [2, 1]],
        }
    }
}

impl MorphologyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_max >= 0.0 && self.amplitude_max < 1.0) {
            return Err(Error::Config(format!(
                "morphology.amplitude_max must lie in [0, 1), got {}",
                self.amplitude_max
            )));
        }
        if !(self.frequency_min > 0.0 && self.frequency_max >= self.frequency_min && self.frequency_max.is_finite()) {
            return Err(Error::Config(format!(
                "morphology.frequency_min/max must satisfy 0 < min <= max, got {} / {}",
                self.frequency_min, self.frequency_max
            )));
        }
        if !(self.voxel_edge.is_finite() && self.voxel_edge > 0.0) {
            return Err(Error::Config(format!("morphology.voxel_edge must be > 0, got {}", self.voxel_edge)));
        }
        if !(self.spawn_clearance.is_finite() && self.spawn_clearance >= 0.0) {
            return Err(Error::Config(format!(
                "morphology.spawn_clearance must be >= 0, got {}",
                self.spawn_clearance
            )));
        }
        if !self.spawn_x.is_finite() {
            return Err(Error::Config("morphology.spawn_x must be finite".into()));
        }
        self.layout().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("morphology.cells: {m}")),
            e => e,
        })?;
        Ok(())
    }

    pub fn layout(&self) -> Result<BipedLayout> {
        BipedLayout::new(self.cells.iter().map(|c| (c[0], c[1])).collect(), self.voxel_edge, self.spawn_x)
    }
}

/// Decode genes into physical controller parameters.
pub fn decode(g: &Genotype, cfg: &MorphologyConfig) -> ControlParams {
    let [a, f, pl, pm, pr] = g.0;
    ControlParams {
        amplitude: a * cfg.amplitude_max,
        frequency: cfg.frequency_min + f * (cfg.frequency_max - cfg.frequency_min),
        column_phase: [pl, pm, pr].map(|p| (p * TAU) % TAU),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipedLayout {
    cells: Vec<(i32, i32)>,
    edge: f64,
    spawn_x: f64,
}

impl BipedLayout {
    pub fn new(cells: Vec<(i32, i32)>, edge: f64, spawn_x: f64) -> Result<Self> {
        if cells.len() != 5 {
            return Err(Error::Config(format!("biped needs exactly 5 voxels, got {}", cells.len())));
        }
        let mut per_column = [0usize; COLUMNS];
        for &(c, r) in &cells {
            if !(0..COLUMNS as i32).contains(&c) || r < 0 {
                return Err(Error::Config(format!("voxel cell ({c}, {r}) outside the 3-column grid")));
            }
            per_column[c as usize] += 1;
        }
        if per_column.contains(&0) {
            return Err(Error::Config("every one of the 3 columns needs a voxel".into()));
        }
        Ok(Self { cells, edge, spawn_x })
    }

    pub fn cells(&self) -> &[(i32, i32)] {
        &self.cells
    }
}

/// A built biped plus the bookkeeping evaluation needs.
#[derive(Debug, Clone)]
pub struct Biped {
    pub body: SoftBody,
    /// Column (and phase gene) driving each voxel.
    pub voxel_column: Vec<usize>,
    /// Rest-pose mass minimising `x + y`.
    pub sw_mass: usize,
    /// Rest-pose mass maximising `x + y`.
    pub ne_mass: usize,
    /// Rest-pose mass maximising `x - y`.
    pub se_mass: usize,
    /// Rest-pose mass minimising `x - y`.
    pub nw_mass: usize,
    pub rest_positions: Vec<Vec2>,
}

impl Biped {
    pub fn rest_scale_at(&self, params: &ControlParams, t: f64, out: &mut [f64]) {
        let cols = params.column_scales(t);
        for (o, &c) in out.iter_mut().zip(&self.voxel_column) {
            *o = cols[c];
        }
    }
}

/// Per-voxel scale factors at time `t` for the given voxel-to-column map.
pub fn rest_scale_at(params: &ControlParams, voxel_column: &[usize], t: f64) -> Vec<f64> {
    let cols = params.column_scales(t);
    voxel_column.iter().map(|&c| cols[c]).collect()
}

/// Build the biped centred on `spawn_x` with its lowest clearance above the
/// terrain equal to `clearance`.
pub fn build_biped(layout: &BipedLayout, terrain: &Terrain, material: &VoxelMaterial, clearance: f64) -> Result<Biped> {
    let mut builder = VoxelGridBuilder::new(layout.edge, material.clone());
    for &(c, r) in &layout.cells {
        builder = builder.voxel(c, r);
    }
    let mut body = builder.build()?;

    let rest_positions: Vec<Vec2> = body.masses.iter().map(|m| m.position).collect();
    let n = rest_positions.len();
    let sum = |i: usize| rest_positions[i].x + rest_positions[i].y;
    let diff = |i: usize| rest_positions[i].x - rest_positions[i].y;
    let sw_mass = (0..n).min_by(|&a, &b| sum(a).total_cmp(&sum(b))).unwrap();
    let ne_mass = (0..n).max_by(|&a, &b| sum(a).total_cmp(&sum(b))).unwrap();
    let se_mass = (0..n).max_by(|&a, &b| diff(a).total_cmp(&diff(b))).unwrap();
    let nw_mass = (0..n).min_by(|&a, &b| diff(a).total_cmp(&diff(b))).unwrap();

    let (lo, hi) = rest_positions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let dx = layout.spawn_x - 0.5 * (lo + hi);
    let mut gap = f64::INFINITY;
    for p in &rest_positions {
        gap = gap.min(p.y - terrain.height_at(p.x + dx)?);
    }
    body.translate(Vec2::new(dx, clearance - gap));
    for m in &body.masses {
        if m.position.y < terrain.height_at(m.position.x)? {
            return Err(Error::Construction("biped spawns below the terrain surface".into()));
        }
    }

    let voxel_column = body.voxels.iter().map(|v| v.cell.0 as usize).collect();
    Ok(Biped { body, voxel_column, sw_mass, ne_mass, se_mass, nw_mass, rest_positions })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    use super::*;
    use crate::terrain::TerrainKind;

    fn default_biped(kind: TerrainKind) -> Biped {
        let cfg = MorphologyConfig::default();
        build_biped(&cfg.layout().unwrap(), &Terrain::new(kind), &VoxelMaterial::default(), cfg.spawn_clearance)
            .unwrap()
    }

    #[test]
    fn decode_lower_bounds() {
        let cfg = MorphologyConfig::default();
        let p = decode(&Genotype::new([0.0; 5]).unwrap(), &cfg);
        assert_eq!(p.amplitude, 0.0);
        assert_eq!(p.frequency, cfg.frequency_min);
        assert_eq!(p.column_phase, [0.0; 3]);
    }

    #[test]
    fn decode_midpoints() {
        let cfg = MorphologyConfig::default();
        let p = decode(&Genotype::new([0.5; 5]).unwrap(), &cfg);
        assert_eq!(p.amplitude, cfg.amplitude_max / 2.0);
        assert_eq!(p.frequency, (cfg.frequency_min + cfg.frequency_max) / 2.0);
        assert_eq!(p.column_phase, [PI; 3]);
    }

    #[test]
    fn decode_upper_bounds_wrap_phase() {
        let cfg = MorphologyConfig::default();
        let p = decode(&Genotype::new([1.0; 5]).unwrap(), &cfg);
        assert_eq!(p.amplitude, cfg.amplitude_max);
        assert_eq!(p.frequency, cfg.frequency_max);
        assert_eq!(p.column_phase, [0.0; 3]);
    }

    #[test]
    fn genes_outside_unit_interval_are_rejected() {
        assert!(Genotype::new([0.0, 0.0, 1.5, 0.0, 0.0]).is_err());
        assert!(Genotype::new([0.0, f64::NAN, 0.5, 0.0, 0.0]).is_err());
        assert!(Genotype::from_slice(&[0.1; 4]).is_err());
        assert!(serde_json::from_str::<Genotype>("[0.1,0.2,0.3,0.4,-0.1]").is_err());
        assert_eq!("0.5,0.5,0.5,0.5,0.5".parse::<Genotype>().unwrap(), Genotype::new([0.5; 5]).unwrap());
    }

    #[test]
    fn rest_scale_examples() {
        let p = ControlParams { amplitude: 0.0, frequency: 1.0, column_phase: [0.3, 1.0, 2.0] };
        for t in [0.0, 0.37, 12.5] {
            assert_eq!(rest_scale_at(&p, &[0, 0, 1, 2, 2], t), vec![1.0; 5]);
        }
        let p = ControlParams { amplitude: 0.2, frequency: 1.0, column_phase: [0.0, PI / 2.0, 0.0] };
        assert_eq!(rest_scale_at(&p, &[0, 1, 2], 0.0), vec![1.0, 1.2, 1.0]);
    }

    // Independent enumeration over the occupancy grid: distinct corner
    // points, distinct unordered edges plus two diagonals per voxel.
    fn enumerate_counts(cells: &[(i32, i32)]) -> (usize, usize) {
        let mut corners = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for &(c, r) in cells {
            let pts = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
            corners.extend(pts);
            for k in 0..4 {
                let (a, b) = (pts[k], pts[(k + 1) % 4]);
                edges.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        (corners.len(), edges.len() + 2 * cells.len())
    }

    #[test]
    fn biped_counts_match_enumeration() {
        let b = default_biped(TerrainKind::Flat);
        let cells = MorphologyConfig::default().layout().unwrap().cells().to_vec();
        let (n_masses, n_springs) = enumerate_counts(&cells);
        assert_eq!(n_masses, 12);
        assert_eq!(n_springs, 26);
        assert_eq!(b.body.masses.len(), n_masses);
        assert_eq!(b.body.springs.len(), n_springs);
        assert_eq!(b.body.voxels.len() * 6, 30);
        for v in &b.body.voxels {
            let unique: BTreeSet<_> = v.springs.iter().collect();
            assert_eq!(unique.len(), 6);
        }
    }

    #[test]
    fn spawn_clearance_on_flat() {
        let b = default_biped(TerrainKind::Flat);
        let min_y = b.body.masses.iter().map(|m| m.position.y).fold(f64::INFINITY, f64::min);
        assert!((min_y - 0.1).abs() < 1e-15);
        let com = b.body.center_of_mass();
        assert!(com.x.abs() < 1e-15);
    }

    #[test]
    fn tracked_corners_span_the_body() {
        let b = default_biped(TerrainKind::Flat);
        assert_eq!(b.rest_positions[b.sw_mass], Vec2::new(0.0, 0.0));
        assert_eq!(b.rest_positions[b.ne_mass], Vec2::new(3.0, 2.0));
        assert_eq!(b.rest_positions[b.se_mass], Vec2::new(3.0, 0.0));
        assert_eq!(b.rest_positions[b.nw_mass], Vec2::new(0.0, 2.0));
    }

    #[test]
    fn spawn_respects_periodic_terrain() {
        for kind in TerrainKind::ALL {
            let b = default_biped(kind);
            let t = Terrain::new(kind);
            let gap = b
                .body
                .masses
                .iter()
                .map(|m| m.position.y - t.height_at(m.position.x).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!((gap - 0.1).abs() < 1e-12, "{kind}: {gap}");
        }
    }

    #[test]
    fn outer_columns_share_scale() {
        let b = default_biped(TerrainKind::Flat);
        let p = decode(&Genotype::new([0.7, 0.3, 0.1, 0.5, 0.9]).unwrap(), &MorphologyConfig::default());
        let mut out = vec![0.0; 5];
        for t in [0.0, 0.11, 3.3] {
            b.rest_scale_at(&p, t, &mut out);
            for col in 0..3 {
                let vals: Vec<f64> =
                    out.iter().zip(&b.voxel_column).filter(|(_, c)| **c == col).map(|(s, _)| *s).collect();
                assert!(vals.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn layouts_need_three_columns() {
        assert!(BipedLayout::new(vec![(0, 0), (0, 1), (2, 0), (2, 1), (2, 2)], 1.0, 0.0).is_err());
        assert!(BipedLayout::new(vec![(0, 0), (1, 0), (2, 0)], 1.0, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_stays_in_bounds(g in prop::array::uniform5(0.0f64..=1.0), t in 0.0f64..100.0) {
                let cfg = MorphologyConfig::default();
                let p = decode(&Genotype::new(g).unwrap(), &cfg);
                for s in p.column_scales(t) {
                    prop_assert!(s >= 1.0 - cfg.amplitude_max - 1e-15 && s <= 1.0 + cfg.amplitude_max + 1e-15);
                }
            }

            #[test]
            fn decode_is_monotone(g in prop::array::uniform5(0.0f64..0.99), i in 0usize..5, d in 0.001f64..0.01) {
                let cfg = MorphologyConfig::default();
                let mut h = g;
                h[i] += d;
                let a = decode(&Genotype::new(g).unwrap(), &cfg);
                let b = decode(&Genotype::new(h).unwrap(), &cfg);
                let va = [a.amplitude, a.frequency, a.column_phase[0], a.column_phase[1], a.column_phase[2]];
                let vb = [b.amplitude, b.frequency, b.column_phase[0], b.column_phase[1], b.column_phase[2]];
                prop_assert!(vb[i] > va[i]);
            }
        }
    }
}
