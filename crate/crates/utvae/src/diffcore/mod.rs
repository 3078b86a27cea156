//! Reverse-mode automatic differentiation over dense 2-D tensors, plus Adam.
//!
//! The numerical substrate for every network and objective in the crate.
//! Forward computations are recorded on a [`Tape`]; [`Tape::backward`]
//! replays the record in reverse and returns exact gradients for the
//! parameters held in a [`ParamStore`]. Tapes live for one step and are
//! dropped afterwards; only parameters and optimizer moments persist
//! across minibatches. Everything is f64: the networks here are small
//! enough that precision is worth more than throughput.

mod adam;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{GradientMap, ParamGroup, ParamId, ParamStore, Parameter};
pub use scalar::{elu, elu_deriv, sigmoid, softplus};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Failures surfaced by differentiation and optimization. Shape mismatches
/// and domain violations panic instead: those are graph-construction bugs.
#[derive(Debug, Error)]
pub enum DiffError {
    /// `backward` was called on a node that is not 1 x 1.
    #[error("backward root must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    /// A gradient contained NaN or infinity; the optimizer step was aborted.
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
}
