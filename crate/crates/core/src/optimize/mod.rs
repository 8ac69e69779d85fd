//! Ask/tell optimizers over genotype space.

pub mod archive;
pub mod cma;
pub mod qda;

pub use archive::{bin_index, Archive, ArchiveStats, DescriptorBounds, Elite, EliteRecord, GRID};
pub use cma::{CmaConfig, CmaConstants, CmaState};
pub use qda::{QdaConfig, QdaState, DEFAULT_BOUNDS};
