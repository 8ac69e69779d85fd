//! Experiment configuration: every tunable constant in one TOML document.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::optimize::{CmaConfig, QdaConfig};
use crate::terrain::{TerrainKind, TerrainParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cma,
    Qda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Cma, Algorithm::Qda];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cma => "cma",
            Algorithm::Qda => "qda",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cma" | "cma-es" | "cmaes" => Ok(Algorithm::Cma),
            "qda" | "map-elites" | "qd" => Ok(Algorithm::Qda),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (expected cma or qda)"))),
        }
    }
}

/// Named scale presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 6 terrains, 30 trials, 2000 evaluations per training run.
    Standard,
    /// flat, spiky and valley; 10 trials; 600 evaluations.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" => Ok(Preset::Standard),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected standard or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training evaluations per trial.
    pub budget: u64,
    pub trials: u32,
    pub terrains: Vec<TerrainKind>,
    pub algorithms: Vec<Algorithm>,
    pub terrain: TerrainParams,
    pub eval: EvalConfig,
    pub cma: CmaConfig,
    pub qda: QdaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Standard)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (terrains, trials, budget) = match preset {
            Preset::Standard => (TerrainKind::ALL.to_vec(), 30, 2000),
            Preset::Desk => (vec![TerrainKind::Flat, TerrainKind::Spiky, TerrainKind::Valley], 10, 600),
        };
        Self {
            seed: 0,
            budget,
            trials,
            terrains,
            algorithms: Algorithm::ALL.to_vec(),
            terrain: TerrainParams::default(),
            eval: EvalConfig::default(),
            cma: CmaConfig::default(),
            qda: QdaConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.terrains.is_empty() {
            return Err(Error::Config("terrains must not be empty".into()));
        }
        for (i, t) in self.terrains.iter().enumerate() {
            if self.terrains[..i].contains(t) {
                return Err(Error::Config(format!("terrains lists `{t}` twice")));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms must not be empty".into()));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::Config(format!("algorithms lists `{a}` twice")));
            }
        }
        self.terrain.validate()?;
        self.eval.validate()?;
        self.cma.validate()?;
        self.qda.validate()?;
        for (name, batch) in [("cma.population", self.cma.population), ("qda.batch", self.qda.batch)] {
            if self.budget == 0 || !self.budget.is_multiple_of(batch as u64) {
                return Err(Error::Config(format!(
                    "budget must be a positive multiple of {name} ({batch}), got {}",
                    self.budget
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for preset in [Preset::Standard, Preset::Desk] {
            let cfg = ExperimentConfig::preset(preset);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[eval.sim]\ndt = 0.0005\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.eval.sim.dt, 0.0005);
        assert_eq!(cfg.budget, 2000);
    }

    fn message(text: &str) -> String {
        match ExperimentConfig::from_toml(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert!(message("budget = 610").contains("budget"));
        assert!(message("[eval.sim]\ndt = -1.0\n").contains("eval.sim.dt"));
        assert!(message("[eval.body]\ndamping = -1.0\n").contains("eval.body.damping"));
        assert!(message("[eval.morphology]\ncells = [[0, 0]]\n").contains("eval.morphology.cells"));
        assert!(message("[qda]\nmutation_sigma = 0.0\n").contains("qda.mutation_sigma"));
        assert!(message("[qda.bounds]\nsquish = [1.0, 0.0]\nwobble = [0.0, 1.0]\n").contains("qda.bounds.squish"));
        assert!(message("[cma]\ninitial_sigma = 0.0\n").contains("cma.initial_sigma"));
        assert!(message("terrains = [\"flat\", \"flat\"]").contains("terrains"));
        assert!(message("terrains = [\"moon\"]").contains("moon"));
        assert!(message("[eval]\nbogus = 1\n").contains("bogus"));
        assert!(message("[terrain]\nextent = 1.0\n").contains("terrain.extent"));
    }

    #[test]
    fn names_parse() {
        assert_eq!("CMA".parse::<Algorithm>().unwrap(), Algorithm::Cma);
        assert_eq!("qda".parse::<Algorithm>().unwrap(), Algorithm::Qda);
        assert!("ga".parse::<Algorithm>().is_err());
        assert_eq!("desk".parse::<Preset>().unwrap(), Preset::Desk);
    }
}
