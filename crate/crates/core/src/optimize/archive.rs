//! 10×10 elite grid over (squish, wobble).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::GaitResult;
use crate::morphology::Genotype;

/// Cells per descriptor axis.
pub const GRID: usize = 10;

const FORMAT: &str = "voxgait-archive";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorBounds {
    pub squish: [f64; 2],
    pub wobble: [f64; 2],
}

impl DescriptorBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("squish", self.squish), ("wobble", self.wobble)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("{name} needs finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

fn axis_bin(d: f64, [lo, hi]: [f64; 2]) -> Result<usize> {
    if !d.is_finite() {
        return Err(Error::NonFiniteDescriptor(d));
    }
    let raw = (GRID as f64 * (d - lo) / (hi - lo)).floor();
    Ok(raw.clamp(0.0, (GRID - 1) as f64) as usize)
}

/// Cell `(row, col)`: row along squish, column along wobble. Values outside
/// the bounds land in the edge cells.
pub fn bin_index(result: &GaitResult, bounds: &DescriptorBounds) -> Result<(usize, usize)> {
    Ok((axis_bin(result.squish, bounds.squish)?, axis_bin(result.wobble, bounds.wobble)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genotype: Genotype,
    pub result: GaitResult,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveStats {
    pub offered: u64,
    pub inserted: u64,
    pub replaced: u64,
    pub rejected: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    cells: Vec<Option<Elite>>,
    bounds: DescriptorBounds,
    stats: ArchiveStats,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    bounds: DescriptorBounds,
    stats: ArchiveStats,
    occupancy: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    config: serde_json::Value,
}

/// Serialized form of one occupied cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EliteRecord {
    pub row: usize,
    pub col: usize,
    pub genes: Genotype,
    pub fitness: f64,
    pub squish: f64,
    pub wobble: f64,
    pub com_start_x: f64,
    pub com_end_x: f64,
    pub sample_count: usize,
}

impl Archive {
    pub fn new(bounds: DescriptorBounds) -> Result<Self> {
        bounds.validate()?;
        Ok(Self { cells: vec![None; GRID * GRID], bounds, stats: ArchiveStats::default() })
    }

    pub fn bounds(&self) -> &DescriptorBounds {
        &self.bounds
    }

    pub fn stats(&self) -> &ArchiveStats {
        &self.stats
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Elite> {
        self.cells.get(row * GRID + col)?.as_ref()
    }

    /// Occupied cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Elite)> {
        self.cells.iter().enumerate().filter_map(|(i, c)| c.as_ref().map(|e| ((i / GRID, i % GRID), e)))
    }

    pub fn elites(&self) -> Vec<Elite> {
        self.iter().map(|(_, e)| *e).collect()
    }

    pub fn occupancy(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy() == 0
    }

    /// Sum of elite fitnesses.
    pub fn qd_score(&self) -> f64 {
        self.iter().map(|(_, e)| e.result.fitness).sum()
    }

    /// Fittest elite; the first in row-major order wins ties.
    pub fn best(&self) -> Option<&Elite> {
        self.iter().map(|(_, e)| e).fold(None, |best: Option<&Elite>, e| match best {
            Some(b) if b.result.fitness >= e.result.fitness => Some(b),
            _ => Some(e),
        })
    }

    /// Offer a candidate. Empty cells accept, occupied cells accept only a
    /// strictly fitter candidate. Failed evaluations are rejected.
    pub fn offer(&mut self, genotype: Genotype, result: GaitResult) -> Result<bool> {
        self.stats.offered += 1;
        if result.failed {
            self.stats.failed += 1;
            return Ok(false);
        }
        let (row, col) = bin_index(&result, &self.bounds)?;
        let cell = &mut self.cells[row * GRID + col];
        match cell {
            None => {
                *cell = Some(Elite { genotype, result });
                self.stats.inserted += 1;
                Ok(true)
            }
            Some(incumbent) if result.fitness > incumbent.result.fitness => {
                *incumbent = Elite { genotype, result };
                self.stats.replaced += 1;
                Ok(true)
            }
            Some(_) => {
                self.stats.rejected += 1;
                Ok(false)
            }
        }
    }

    /// Every elite re-bins to the cell holding it.
    pub fn is_consistent(&self) -> bool {
        self.iter().all(|(cell, e)| bin_index(&e.result, &self.bounds).map(|c| c == cell).unwrap_or(false))
    }

    /// Line-delimited JSON: a header line, then one line per elite.
    pub fn write_jsonl<W: Write>(&self, mut out: W, config: Option<&serde_json::Value>) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            bounds: self.bounds,
            stats: self.stats,
            occupancy: self.occupancy(),
            config: config.cloned().unwrap_or(serde_json::Value::Null),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Occupied cells in row-major order.
    pub fn records(&self) -> Vec<EliteRecord> {
        self.iter()
            .map(|((row, col), e)| EliteRecord {
                row,
                col,
                genes: e.genotype,
                fitness: e.result.fitness,
                squish: e.result.squish,
                wobble: e.result.wobble,
                com_start_x: e.result.com_start_x,
                com_end_x: e.result.com_end_x,
                sample_count: e.result.sample_count,
            })
            .collect()
    }

    /// Rebuild an archive, checking that every record sits in its own cell
    /// and no cell repeats.
    pub fn from_records(bounds: DescriptorBounds, stats: ArchiveStats, records: &[EliteRecord]) -> Result<Archive> {
        let mut archive = Archive::new(bounds)?;
        for rec in records {
            archive.insert_record(*rec)?;
        }
        archive.stats = stats;
        Ok(archive)
    }

    /// Inverse of [`Archive::write_jsonl`]. Returns the archive and the
    /// embedded config, if any.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<(Archive, serde_json::Value)> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| Error::Format("empty archive file".into()))??;
        let header: Header = serde_json::from_str(&header_line)?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        if records.len() != header.occupancy {
            return Err(Error::Format(format!(
                "header announces {} elites, found {}",
                header.occupancy,
                records.len()
            )));
        }
        Ok((Archive::from_records(header.bounds, header.stats, &records)?, header.config))
    }

    fn insert_record(&mut self, rec: EliteRecord) -> Result<()> {
        if rec.row >= GRID || rec.col >= GRID {
            return Err(Error::Format(format!("cell ({}, {}) outside the grid", rec.row, rec.col)));
        }
        let result = GaitResult {
            fitness: rec.fitness,
            squish: rec.squish,
            wobble: rec.wobble,
            com_start_x: rec.com_start_x,
            com_end_x: rec.com_end_x,
            sample_count: rec.sample_count,
            failed: false,
        };
        if bin_index(&result, &self.bounds)? != (rec.row, rec.col) {
            return Err(Error::Format(format!("elite does not belong to cell ({}, {})", rec.row, rec.col)));
        }
        let cell = &mut self.cells[rec.row * GRID + rec.col];
        if cell.is_some() {
            return Err(Error::Format(format!("cell ({}, {}) listed twice", rec.row, rec.col)));
        }
        *cell = Some(Elite { genotype: rec.genes, result });
        Ok(())
    }
}
