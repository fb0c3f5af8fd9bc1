//! Apple leaf disease classification from scratch.
//!
//! * [`tensor`], [`ops`], [`autodiff`]: dense tensors, forward/backward
//!   kernels and a reverse-mode tape.
//! * [`model`]: ResNet-34 with replaceable classification head and a
//!   binary checkpoint format.
//! * [`data`]: image ingestion, augmentation, stratified split, batching.
//! * [`train`]: plain SGD training and evaluation.
//! * [`metrics`]: confusion-matrix metrics and reports.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Backend, Eager, Gradients, Graph, Parameter, Var};
pub use error::{Error, Result};
pub use ops::Mode;
pub use tensor::{Scalar, Tensor};
