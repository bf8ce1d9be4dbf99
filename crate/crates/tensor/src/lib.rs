//! Minimal N-d tensors with tape-based reverse-mode differentiation and the
//! layer set of a 3-d DenseNet: conv3d, batch norm, ReLU, average and global
//! average pooling, dense, softmax / cross-entropy and channel concatenation.
//!
//! Training runs in `f32`; every op is generic over [`Element`] so the same
//! code runs in `f64` under [`gradcheck::grad_check`].

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_random, relative_error, GradCheckReport, GRAD_CHECK_STEP};
pub use graph::{Graph, Var};
pub use ops::conv::{conv_output_extent, ConvGeometry};
pub use ops::norm::{BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::pool::pool_output_extent;
pub use tensor::{Element, Precision, Tensor};
