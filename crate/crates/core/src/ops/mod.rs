//! Gradient-free numeric kernels. The differentiable wrappers in
//! [`crate::autograd`] and the frozen auxiliary providers call into these.

pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

pub use conv::{Conv2dConfig, ConvPlan, Padding, Pads};
pub use dense::{Targets, LOG_CLAMP};
pub use norm::{Mode, BN_EPSILON, BN_MOMENTUM, DEFAULT_DROPOUT};
pub use pool::{PoolConfig, PoolIndices, PoolPlan};

/// `max(0, x)` elementwise.
pub fn relu(x: &crate::tensor::Tensor) -> crate::tensor::Tensor {
    x.map(|v| v.max(0.0))
}
