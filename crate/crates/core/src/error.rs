use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors from reading, writing and preprocessing volumes and manifests.
#[derive(Debug, Error)]
pub enum VolumeIoError {
    #[error("not a single-file NIfTI-1 image: {0}")]
    BadMagic(String),

    #[error("unsupported NIfTI datatype code {0} (supported: int16, float32, float64)")]
    UnsupportedDtype(i16),

    #[error("file truncated: need {expected} bytes, have {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("degenerate volume dimensions {0:?}")]
    DegenerateVolume([usize; 3]),

    #[error("volume contains non-finite intensities")]
    NonFinite,

    #[error("scan has no volumes")]
    EmptyScan,

    #[error("{what}: expected {expected} entries (one per volume), found {found}")]
    SidecarMismatch { what: &'static str, expected: usize, found: usize },

    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("manifest line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("record {id:?}: volume index {index} out of range for {path} ({count} volumes)")]
    VolumeIndexOutOfRange { id: String, index: usize, count: usize, path: PathBuf },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl VolumeIoError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| VolumeIoError::Io { path, source }
    }
}
