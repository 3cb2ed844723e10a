//! Bi-level search driver, discretization, standalone retraining and
//! checkpoints.

mod checkpoint;
mod discrete;
mod net;
mod optim;
mod search;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use discrete::{discretize, DiscreteArchitecture, DiscreteLayer, DiscreteStage};
pub use net::{retrain, DiscreteNet, RetrainConfig};
pub use optim::{poly_lr, Adam, AdamConfig};
pub use search::{
    arch_objective, dense_probs, discretization_gap, run_search, run_search_with, ArchTerms,
    GapReport, GroupRecord, LevelEntropy, Search, SearchConfig, SearchOutcome, SearchState,
    TrajectoryRecord,
};
