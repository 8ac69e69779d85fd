//! Optimize-then-transfer experiment harness.

pub mod aggregate;
pub mod config;
pub mod record;
pub mod runner;

pub use aggregate::{aggregate, Aggregate, TransferMatrix};
pub use config::{Algorithm, ExperimentConfig, Preset};
pub use record::{TrialRecord, TrialSpec, TrialStatus, TransferEntry};
pub use runner::{
    load_records, pilot, run_full, run_optimization_phase, run_transfer_phase, run_trial, trial_seed, trial_specs,
    RunManifest,
};
