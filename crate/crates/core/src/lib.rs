//! Volumetric quality control for diffusion MRI.
//!
//! The crate covers the full pipeline: NIfTI ingestion and preprocessing,
//! the 3-d DenseNet classifier, subject-stratified data handling, training
//! and fine-tuning, threshold-based inference with metrics and reports, and a
//! synthetic phantom generator with artifact injectors.

pub mod data;
pub mod error;
pub mod manifest;
pub mod model;
pub mod nifti;
pub mod phantom;
pub mod preprocess;
pub mod qc;
pub mod trainer;
pub mod volume;

pub use error::VolumeIoError;
pub use model::{build_model, load_checkpoint, save_checkpoint, Mode, Model, ModelConfig, ModelError};
pub use manifest::{load_manifest, parse_manifest, save_manifest, Manifest, VolumeRecord};
pub use nifti::{decode_nifti, encode_nifti, read_nifti, write_nifti};
pub use preprocess::preprocess;
pub use volume::{extract_volumes, Label, Scan4D, Volume3D};
