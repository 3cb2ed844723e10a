//! Synthetic multi-scale 1-D dense-labeling task, exhaustive enumeration of
//! small spaces, the brute-force retraining oracle, exact FLOPs, and the
//! finite-difference gradient suite.

pub mod gradsuite;
mod oracle;
mod task;

pub use oracle::{
    enumerate_space, exact_flops, oracle_position, oracle_rank, OracleEntry,
    DEFAULT_ENUMERATION_CAP,
};
pub use task::{gen_task, mean_iou, Dataset, Split, TaskConfig};
