//! Dense tensors with reverse-mode autodiff.
//!
//! The engine is deliberately small: eager define-by-run graph, a fixed op
//! vocabulary (convolution, pooling, affine maps, LSTM cell, activations,
//! the two training losses) and a bias-corrected Adam optimizer. Forward
//! kernels are shared between the training graph and the inference paths so
//! that both produce bit-identical values for identical inputs.
//!
//! Training runs in `f32`; the same code instantiates at `f64` for the
//! finite-difference gradient checks.

mod graph;
mod kernels;
mod optim;
#[allow(clippy::module_inception)]
mod tensor;

pub use graph::{Graph, Op, Var};
pub use kernels::{ColView, ConvSpec};
pub use optim::Adam;
pub use tensor::{Scalar, ShapeError, Tensor};
