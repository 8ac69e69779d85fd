//! Per-trial record files: a versioned header line followed by training,
//! archive and transfer lines.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Algorithm;
use crate::error::{Error, Result};
use crate::optimize::{Archive, ArchiveStats, DescriptorBounds, Elite, EliteRecord};
use crate::terrain::TerrainKind;

pub const RECORD_FORMAT: &str = "voxgait-trial";
pub const RECORD_VERSION: u32 = 1;

/// Identity of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub terrain: TerrainKind,
    pub algorithm: Algorithm,
    pub trial: u32,
    pub seed: u64,
}

impl TrialSpec {
    /// `results/<terrain>/<algorithm>/trial_<n>.jsonl` under `root`.
    pub fn path(&self, root: &Path) -> PathBuf {
        record_path(root, self.terrain, self.algorithm, self.trial)
    }
}

pub fn record_path(root: &Path, terrain: TerrainKind, algorithm: Algorithm, trial: u32) -> PathBuf {
    root.join("results").join(terrain.as_str()).join(algorithm.as_str()).join(format!("trial_{trial}.jsonl"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub evaluations: u64,
    pub failed_evaluations: u64,
    /// Best-ever candidate for cma, best archive elite for qda.
    pub best: Option<Elite>,
}

impl Training {
    pub fn best_fitness(&self) -> Option<f64> {
        self.best.map(|e| e.result.fitness)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferEntry {
    pub terrain: TerrainKind,
    /// Champion fitness (cma) or the best re-evaluated elite (qda).
    pub fitness: f64,
    pub evaluations: u64,
    pub failed_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub spec: TrialSpec,
    pub budget: u64,
    pub training: Training,
    /// Final archive, qda only.
    pub archive: Option<Archive>,
    pub transfers: Vec<TransferEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format: String,
    version: u32,
    terrain: TerrainKind,
    algorithm: Algorithm,
    trial: u32,
    seed: u64,
    budget: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveLine {
    bounds: DescriptorBounds,
    stats: ArchiveStats,
    occupancy: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(HeaderLine),
    Training(Training),
    Archive(ArchiveLine),
    Elite(EliteRecord),
    Transfer(TransferEntry),
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.training.status == TrialStatus::Ok
    }

    pub fn transfer(&self, terrain: TerrainKind) -> Option<&TransferEntry> {
        self.transfers.iter().find(|t| t.terrain == terrain)
    }

    /// A successful trial has exactly one transfer per non-training terrain
    /// in `terrains`; a failed one has none.
    pub fn check_transfers(&self, terrains: &[TerrainKind]) -> Result<()> {
        let expected: Vec<TerrainKind> =
            if self.is_ok() { terrains.iter().copied().filter(|&t| t != self.spec.terrain).collect() } else { vec![] };
        let mut got: Vec<TerrainKind> = self.transfers.iter().map(|t| t.terrain).collect();
        let mut want = expected.clone();
        got.sort();
        want.sort();
        if got != want {
            return Err(Error::Format(format!(
                "{}/{}/trial_{}: transfers cover {:?}, expected {:?}",
                self.spec.terrain, self.spec.algorithm, self.spec.trial, got, want
            )));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Header(HeaderLine {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            terrain: self.spec.terrain,
            algorithm: self.spec.algorithm,
            trial: self.spec.trial,
            seed: self.spec.seed,
            budget: self.budget,
        }))?;
        line(&Line::Training(self.training.clone()))?;
        if let Some(archive) = &self.archive {
            line(&Line::Archive(ArchiveLine {
                bounds: *archive.bounds(),
                stats: *archive.stats(),
                occupancy: archive.occupancy(),
            }))?;
            for rec in archive.records() {
                line(&Line::Elite(rec))?;
            }
        }
        for t in &self.transfers {
            line(&Line::Transfer(t.clone()))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read<R: BufRead>(input: R) -> Result<TrialRecord> {
        let mut header = None;
        let mut training = None;
        let mut archive_line = None;
        let mut elites = Vec::new();
        let mut transfers = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            match (parsed, n) {
                (Line::Header(h), 0) => {
                    if h.format != RECORD_FORMAT || h.version != RECORD_VERSION {
                        return Err(Error::Format(format!(
                            "expected {RECORD_FORMAT} v{RECORD_VERSION}, found {} v{}",
                            h.format, h.version
                        )));
                    }
                    header = Some(h);
                }
                (Line::Header(_), _) => return Err(Error::Format("header must be the first line".into())),
                (_, 0) => return Err(Error::Format("missing header line".into())),
                (Line::Training(t), _) if training.is_none() => training = Some(t),
                (Line::Archive(a), _) if archive_line.is_none() => archive_line = Some(a),
                (Line::Elite(e), _) => elites.push(e),
                (Line::Transfer(t), _) => transfers.push(t),
                _ => return Err(Error::Format(format!("line {}: repeated section", n + 1))),
            }
        }
        let header = header.ok_or_else(|| Error::Format("empty record".into()))?;
        let training = training.ok_or_else(|| Error::Format("missing training line".into()))?;
        let archive = match archive_line {
            Some(a) => {
                if a.occupancy != elites.len() {
                    return Err(Error::Format(format!(
                        "archive announces {} elites, found {}",
                        a.occupancy,
                        elites.len()
                    )));
                }
                Some(Archive::from_records(a.bounds, a.stats, &elites)?)
            }
            None if elites.is_empty() => None,
            None => return Err(Error::Format("elite lines without an archive line".into())),
        };
        Ok(TrialRecord {
            spec: TrialSpec {
                terrain: header.terrain,
                algorithm: header.algorithm,
                trial: header.trial,
                seed: header.seed,
            },
            budget: header.budget,
            training,
            archive,
            transfers,
        })
    }

    pub fn load(path: &Path) -> Result<TrialRecord> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Write under `root`, replacing any earlier version atomically.
    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let path = self.spec.path(root);
        write_atomic(&path, &self.to_bytes())?;
        Ok(path)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Every `trial_<n>.jsonl` under `root/results`, in path order.
pub fn find_records(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let results = root.join("results");
    if !results.is_dir() {
        return Err(Error::Format(format!("{} has no results directory", root.display())));
    }
    let mut stack = vec![results];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "jsonl")
                && path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("trial_"))
            {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::GaitResult;
    use crate::morphology::Genotype;

    fn result(fitness: f64, squish: f64, wobble: f64) -> GaitResult {
        GaitResult { fitness, squish, wobble, com_start_x: 0.1, com_end_x: 0.1 + 25.0 * fitness, sample_count: 500, failed: false }
    }

    fn qda_record() -> TrialRecord {
        let bounds = DescriptorBounds { squish: [0.0, 1.0], wobble: [0.0, 10.0] };
        let mut archive = Archive::new(bounds).unwrap();
        let g1 = Genotype::new([0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let g2 = Genotype::new([0.9, 0.8, 0.7, 0.6, 1.0 / 3.0]).unwrap();
        archive.offer(g1, result(0.7, 0.05, 0.3)).unwrap();
        archive.offer(g2, result(1.25, 0.55, 7.1)).unwrap();
        let best = archive.best().copied();
        TrialRecord {
            spec: TrialSpec { terrain: TerrainKind::Spiky, algorithm: Algorithm::Qda, trial: 3, seed: u64::MAX - 5 },
            budget: 40,
            training: Training { status: TrialStatus::Ok, error: None, evaluations: 40, failed_evaluations: 1, best },
            archive: Some(archive),
            transfers: vec![
                TransferEntry { terrain: TerrainKind::Flat, fitness: 0.1 + 0.2, evaluations: 2, failed_evaluations: 0 },
                TransferEntry { terrain: TerrainKind::Valley, fitness: 0.0, evaluations: 2, failed_evaluations: 2 },
            ],
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let rec = qda_record();
        let bytes = rec.to_bytes();
        let back = TrialRecord::read(bytes.as_slice()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.to_bytes(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"kind\":\"header\",\"format\":\"voxgait-trial\",\"version\":1"));
        assert_eq!(text.lines().count(), 1 + 1 + 1 + 2 + 2);
    }

    #[test]
    fn failed_trial_round_trips() {
        let rec = TrialRecord {
            spec: TrialSpec { terrain: TerrainKind::Flat, algorithm: Algorithm::Cma, trial: 0, seed: 1 },
            budget: 600,
            training: Training {
                status: TrialStatus::Failed,
                error: Some("optimizer degenerate: step size became 0".into()),
                evaluations: 220,
                failed_evaluations: 0,
                best: None,
            },
            archive: None,
            transfers: vec![],
        };
        assert_eq!(TrialRecord::read(rec.to_bytes().as_slice()).unwrap(), rec);
        rec.check_transfers(&TerrainKind::ALL).unwrap();
    }

    #[test]
    fn transfer_coverage() {
        let rec = qda_record();
        rec.check_transfers(&[TerrainKind::Flat, TerrainKind::Spiky, TerrainKind::Valley]).unwrap();
        assert!(rec.check_transfers(&TerrainKind::ALL).is_err());
        assert!(rec.check_transfers(&[TerrainKind::Flat, TerrainKind::Spiky]).is_err());
    }

    #[test]
    fn malformed_input_is_rejected() {
        let text = String::from_utf8(qda_record().to_bytes()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let without_header = lines[1..].join("\n");
        assert!(TrialRecord::read(without_header.as_bytes()).is_err());
        let future = text.replace("\"version\":1", "\"version\":99");
        assert!(TrialRecord::read(future.as_bytes()).is_err());
        let missing_elite = [&lines[..3], &lines[4..]].concat().join("\n");
        assert!(TrialRecord::read(missing_elite.as_bytes()).is_err());
        let doubled = [&lines[..2], &lines[1..]].concat().join("\n");
        assert!(TrialRecord::read(doubled.as_bytes()).is_err());
    }

    #[test]
    fn save_load_and_discover() {
        let dir = tempfile::tempdir().unwrap();
        let rec = qda_record();
        let path = rec.save(dir.path()).unwrap();
        assert!(path.ends_with("results/spiky/qda/trial_3.jsonl"));
        assert_eq!(TrialRecord::load(&path).unwrap(), rec);
        assert_eq!(find_records(dir.path()).unwrap(), vec![path]);
    }
}
