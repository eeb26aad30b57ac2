//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Primitives
//! are methods on the tape returning [`Var`] handles; [`Tape::backward`]
//! replays the recorded ops in reverse creation order.
//!
//! Elementwise binary ops broadcast only over leading dimensions: the smaller
//! operand's shape must be a suffix of the larger one's (e.g. a `(C)` bias
//! against `(B, C)` activations).

mod check;
mod ops;
mod tape;

pub use check::{gradient_check, gradient_check_many, DEFAULT_STEP};
pub use tape::{ConvGeometry, Gradients, Tape, Var};
