//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)
//! values, plus a central-difference gradient checker.

mod graph;
pub mod gradcheck;
mod ops;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{Gradients, Graph, TraceEvent, Var};
pub use ops::{RunningStats, UpdatedStats};
