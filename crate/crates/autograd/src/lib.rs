//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]s. Computations are recorded on a [`Graph`]: each
//! operation returns a [`Var`] handle to its output node and registers a
//! backward rule. [`Graph::backward`] walks the tape once in reverse order and
//! leaves `dLoss/dNode` in every node that requires a gradient.
//!
//! The scalar type is generic ([`Scalar`] is implemented for `f32` and `f64`);
//! training runs in 32-bit, gradient checks in 64-bit.

mod error;
mod graph;
mod linalg;
mod ops;
mod scalar;
mod shape;
mod tensor;

pub mod check;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use ops::norm::BatchStats;
pub use scalar::Scalar;
pub use shape::broadcast_shapes;
pub use tensor::Tensor;
