//! Differentiable joint-dimensional architecture search with solution space
//! regularization.
//!
//! The crate is organised bottom-up:
//!
//! * [`adcore`] is a small reverse-mode automatic differentiation engine over
//!   dense `f64` tensors.
//! * [`archspace`] describes the depth / dilation-and-spatial / channel search
//!   space and builds the weight-sharing supernet with its continuous
//!   relaxation.
//! * [`regloss`] holds probability normalization, the SSR loss and the
//!   competing auxiliary losses, architecture entropy, and the numerical
//!   L0-equivalence diagnostics.
//! * [`shrink`] implements hierarchical and progressive solution-space
//!   shrinking.
//! * [`costmodel`] is the differentiable expected-FLOPs model and the FLOPs
//!   constraint loss.
//! * [`engine`] runs the bi-level alternating search, discretization, gap
//!   measurement, and retraining.
//! * [`bench`] generates the synthetic dense-labeling task and provides the
//!   brute-force enumeration oracle and exact FLOPs counting.

pub mod adcore;
pub mod archspace;
pub mod bench;
pub mod costmodel;
pub mod engine;
mod error;
pub mod regloss;
pub mod rng;
pub mod shrink;

pub use error::{Error, Result};
