//! Forward and backward kernels on plain tensors.
//!
//! These are graph-agnostic; [`crate::autodiff`] wires them into a tape.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use batchnorm::{BatchNormConfig, BatchStatistics, Mode, RunningStats};
pub use conv::{output_extent, Conv2dGeometry};
pub use loss::softmax;
pub use pool::Pool2dGeometry;
