//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive operations eagerly as they are applied. Each
//! node keeps its forward value, which doubles as the saved activation for
//! the backward sweep. Leaves created with [`Tape::input`] or [`Tape::leaf`]
//! accumulate gradients across [`Tape::backward`] calls until
//! [`Tape::zero_grad`]; constants never receive gradients.
//!
//! Recorded tapes can be replayed with new input values via
//! [`Tape::forward_eval`], which recomputes every node in recording order.

mod check;
mod kernels;
mod tape;
mod tensor;

pub use check::{finite_diff_check, numeric_gradient};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
