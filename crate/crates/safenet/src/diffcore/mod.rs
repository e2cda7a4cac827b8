//! Dense-array numerical kernel with reverse-mode automatic
//! differentiation.
//!
//! The module is deliberately small: a [`Tensor`] of 64-bit floats, a
//! define-by-run [`Tape`], the operations the network needs (matrix
//! products, conv1d, element-wise maps, reductions, softmax, batch norm,
//! row routing), and a finite-difference [`grad_check`] harness.

mod gradcheck;
pub(crate) mod kernels;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, OpCounters, Tape};
pub use tensor::Tensor;
