//! Channel-boosted split-transform-merge networks for COVID-19 CT analysis:
//! an f64 tensor and reverse-mode autodiff core, the detection and
//! segmentation models, data loading, training and evaluation metrics.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;
mod util;

pub use error::{Error, Result};
pub use tensor::{RngState, Shape, Tensor};
pub use util::write_atomic;
