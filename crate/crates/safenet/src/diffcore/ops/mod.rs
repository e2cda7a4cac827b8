//! Differentiable operations on [`Tensor`](crate::diffcore::Tensor).
//!
//! Each operation computes its forward value eagerly and, when any input
//! is tracked by the tape, records a closure implementing its backward
//! rule. Only the operations the model needs exist; there is no general
//! broadcasting engine.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod select;

pub use conv::{conv1d, Pad1d};
pub use elementwise::{add, mul, relu, scale, sigmoid, sub};
pub use linalg::{add_bcast, linear, matmul, reshape, transpose_2d};
pub use norm::{batch_norm, RunningStats};
pub use reduce::{cross_entropy_mean, mean_all, mean_rows, mean_time, row_dot, softmax, sum_all};
pub use select::{assemble_rows, concat_rows, gather_rows};
