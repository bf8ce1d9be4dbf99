//! 3-d DenseNet classifier: configuration, parameters, forward pass and
//! checkpoint files.

mod checkpoint;
mod config;
mod densenet;

use std::io;
use std::path::PathBuf;

use qcnet_tensor::TensorError;
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, StageShape};
pub use densenet::{build_model, BnBuffer, Mode, Model, Param, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("spatial extent collapses at {stage}: {dims:?}")]
    SpatialUnderflow { stage: String, dims: [usize; 3] },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),

    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptTensor(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}
