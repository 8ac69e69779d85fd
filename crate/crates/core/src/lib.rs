//! Gait synthesis for a five-voxel soft biped.
//!
//! The crate bundles a 2D mass-spring voxel simulator, six benchmark
//! terrains, an open-loop sinusoidal controller, two ask/tell optimizers
//! (CMA-ES and a MAP-Elites grid archive) and the optimize-then-transfer
//! experiment harness built on top of them.

pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod morphology;
pub mod optimize;
pub mod sim;
pub mod terrain;
pub mod vec2;

pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalConfig, GaitResult};
pub use morphology::Genotype;
pub use sim::{SimConfig, SoftBody};
pub use terrain::{Terrain, TerrainKind};
pub use vec2::Vec2;
