//! Piecewise-linear ground profiles.
//!
//! Every terrain is a height field `y = h(x)` given by an ordered vertex list.
//! The four periodic terrains have their troughs on multiples of the period
//! with `x = 0` at a trough; the valley is `y = slope * |x|`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Peak height shared by every periodic terrain.
pub const FEATURE_HEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Flat,
    Spiky,
    Longspikes,
    Longerspikes,
    Sawtooth,
    Valley,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 6] = [
        TerrainKind::Flat,
        TerrainKind::Spiky,
        TerrainKind::Longspikes,
        TerrainKind::Longerspikes,
        TerrainKind::Sawtooth,
        TerrainKind::Valley,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::Spiky => "spiky",
            TerrainKind::Longspikes => "longspikes",
            TerrainKind::Longerspikes => "longerspikes",
            TerrainKind::Sawtooth => "sawtooth",
            TerrainKind::Valley => "valley",
        }
    }

    /// Feature period for periodic terrains.
    pub fn period(self) -> Option<f64> {
        match self {
            TerrainKind::Spiky => Some(1.0),
            TerrainKind::Longspikes => Some(2.0),
            TerrainKind::Longerspikes => Some(4.0),
            TerrainKind::Sawtooth => Some(1.5),
            TerrainKind::Flat | TerrainKind::Valley => None,
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flat" => Ok(TerrainKind::Flat),
            "spiky" => Ok(TerrainKind::Spiky),
            "longspikes" => Ok(TerrainKind::Longspikes),
            "longerspikes" => Ok(TerrainKind::Longerspikes),
            "sawtooth" | "sparsespike" => Ok(TerrainKind::Sawtooth),
            "valley" => Ok(TerrainKind::Valley),
            other => Err(Error::Config(format!("unknown terrain name `{other}`"))),
        }
    }
}

/// Parse a comma separated terrain list such as `flat,spiky,valley`.
pub fn parse_terrain_list(s: &str) -> Result<Vec<TerrainKind>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let kind: TerrainKind = part.parse()?;
        if out.contains(&kind) {
            return Err(Error::Config(format!("terrain `{kind}` listed twice")));
        }
        out.push(kind);
    }
    if out.is_empty() {
        return Err(Error::Config("terrain list is empty".into()));
    }
    Ok(out)
}

/// Shape knobs for terrain construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainParams {
    /// Half-width of the profile; the profile covers at least `[-extent, extent]`.
    pub extent: f64,
    pub valley_slope: f64,
    /// Fraction of the sawtooth period spent on the falling face.
    pub sawtooth_fall_fraction: f64,
    /// Drop-then-rise instead of rise-then-drop.
    pub sawtooth_flipped: bool,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            extent: 200.0,
            valley_slope: 0.2,
            sawtooth_fall_fraction: 1.0 / 3.0,
            sawtooth_flipped: false,
        }
    }
}

impl TerrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent.is_finite() && self.extent >= 10.0) {
            return Err(Error::Config(format!(
                "terrain.extent must be finite and >= 10, got {}",
                self.extent
            )));
        }
        if !(self.valley_slope.is_finite() && self.valley_slope >= 0.0) {
            return Err(Error::Config(format!(
                "terrain.valley_slope must be finite and >= 0, got {}",
                self.valley_slope
            )));
        }
        if !(self.sawtooth_fall_fraction > 0.0 && self.sawtooth_fall_fraction < 1.0) {
            return Err(Error::Config(format!(
                "terrain.sawtooth_fall_fraction must lie in (0, 1), got {}",
                self.sawtooth_fall_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub kind: TerrainKind,
    vertices: Vec<Vec2>,
}

impl Terrain {
    /// Build a terrain with default shape parameters.
    pub fn new(kind: TerrainKind) -> Terrain {
        make_terrain(kind, &TerrainParams::default()).expect("default terrain parameters are valid")
    }

    /// Wrap a raw vertex list. Vertices must have strictly increasing x.
    pub fn from_vertices(kind: TerrainKind, vertices: Vec<Vec2>) -> Result<Terrain> {
        if vertices.len() < 2 {
            return Err(Error::Config("terrain needs at least two vertices".into()));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("terrain vertex is not finite".into()));
        }
        if vertices.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(Error::Config("terrain vertex x must be strictly increasing".into()));
        }
        Ok(Terrain { kind, vertices })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.vertices[0].x, self.vertices[self.vertices.len() - 1].x)
    }

    #[inline]
    fn segment_index(&self, x: f64) -> Result<usize> {
        let (lo, hi) = self.extent();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfExtent { x, lo, hi });
        }
        // first vertex strictly right of x, minus one
        let i = self.vertices.partition_point(|v| v.x <= x);
        Ok(i.saturating_sub(1).min(self.vertices.len() - 2))
    }

    #[inline]
    fn interpolate(&self, seg: usize, x: f64) -> f64 {
        let a = self.vertices[seg];
        let b = self.vertices[seg + 1];
        // Anchored at the lower vertex so troughs and the valley floor are exact.
        let slope = (b.y - a.y) / (b.x - a.x);
        if a.y <= b.y {
            a.y + slope * (x - a.x)
        } else {
            b.y - slope * (b.x - x)
        }
    }

    /// Ground height at `x` by linear interpolation.
    pub fn height_at(&self, x: f64) -> Result<f64> {
        let seg = self.segment_index(x)?;
        Ok(self.interpolate(seg, x))
    }

    /// Height together with the upward unit normal of the segment under `x`.
    #[inline]
    pub fn surface_at(&self, x: f64) -> Result<(f64, Vec2)> {
        let seg = self.segment_index(x)?;
        Ok(self.surface_of(seg, x))
    }

    /// As [`Terrain::surface_at`], trying segment `hint` before searching.
    /// `hint` is updated to the segment used.
    #[inline]
    pub fn surface_near(&self, x: f64, hint: &mut usize) -> Result<(f64, Vec2)> {
        let v = &self.vertices;
        let h = *hint;
        let seg = if h + 2 < v.len() && v[h].x <= x && x < v[h + 1].x {
            h
        } else if h + 3 < v.len() && v[h + 1].x <= x && x < v[h + 2].x {
            h + 1
        } else if h >= 1 && h + 1 < v.len() && v[h - 1].x <= x && x < v[h].x {
            h - 1
        } else {
            self.segment_index(x)?
        };
        *hint = seg;
        Ok(self.surface_of(seg, x))
    }

    #[inline]
    fn surface_of(&self, seg: usize, x: f64) -> (f64, Vec2) {
        let a = self.vertices[seg];
        let b = self.vertices[seg + 1];
        let d = b - a;
        let len = d.norm();
        (self.interpolate(seg, x), Vec2::new(-d.y / len, d.x / len))
    }

    /// Reflection of this profile about the vertical line `x = axis`.
    pub fn mirrored(&self, axis: f64) -> Terrain {
        let vertices = self.vertices.iter().rev().map(|v| v.mirror_x(axis)).collect();
        Terrain { kind: self.kind, vertices }
    }

    /// Two-column `x,y` vertex CSV, optionally restricted to a window.
    pub fn write_csv<W: Write>(&self, mut out: W, window: Option<(f64, f64)>) -> Result<()> {
        writeln!(out, "x,y")?;
        for v in &self.vertices {
            if let Some((lo, hi)) = window {
                if v.x < lo || v.x > hi {
                    continue;
                }
            }
            writeln!(out, "{},{}", v.x, v.y)?;
        }
        Ok(())
    }
}

/// Construct one of the six named terrains.
pub fn make_terrain(kind: TerrainKind, params: &TerrainParams) -> Result<Terrain> {
    params.validate()?;
    let extent = params.extent;
    let vertices = match kind {
        TerrainKind::Flat => vec![Vec2::new(-extent, 0.0), Vec2::new(extent, 0.0)],
        TerrainKind::Valley => vec![
            Vec2::new(-extent, params.valley_slope * extent),
            Vec2::new(0.0, 0.0),
            Vec2::new(extent, params.valley_slope * extent),
        ],
        TerrainKind::Spiky | TerrainKind::Longspikes | TerrainKind::Longerspikes => {
            let period = kind.period().unwrap();
            periodic(period, extent, &[(0.5, FEATURE_HEIGHT)])
        }
        TerrainKind::Sawtooth => {
            let period = kind.period().unwrap();
            let apex = if params.sawtooth_flipped {
                params.sawtooth_fall_fraction
            } else {
                1.0 - params.sawtooth_fall_fraction
            };
            periodic(period, extent, &[(apex, FEATURE_HEIGHT)])
        }
    };
    Terrain::from_vertices(kind, vertices)
}

/// Repeat one period of a shape with troughs at integer multiples of `period`.
/// `inner` lists (fraction of period, height) vertices strictly inside a period.
fn periodic(period: f64, extent: f64, inner: &[(f64, f64)]) -> Vec<Vec2> {
    let first = (-extent / period).floor() as i64;
    let last = (extent / period).ceil() as i64;
    let mut out = Vec::with_capacity(((last - first) as usize + 1) * (inner.len() + 1));
    for k in first..=last {
        let x0 = k as f64 * period;
        out.push(Vec2::new(x0, 0.0));
        if k < last {
            for &(frac, h) in inner {
                out.push(Vec2::new(x0 + frac * period, h));
            }
        }
    }
    out
}
