use serde::{Deserialize, Serialize};

use crate::error::VolumeIoError;

/// Volume-level ground truth or decision. Artifact is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Artifact,
}

impl Label {
    /// Softmax output index: 0 = Normal, 1 = Artifact.
    pub fn class_index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Artifact => 1,
        }
    }

    pub fn is_artifact(self) -> bool {
        self == Label::Artifact
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Artifact => "artifact",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "artifact" => Ok(Label::Artifact),
            "normal" => Ok(Label::Normal),
            other => Err(format!("unknown label {other:?} (expected \"artifact\" or \"normal\")")),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single 3-d image. Voxels are stored x-fastest, then y, then z, which is
/// both the NIfTI on-disk order and the `[D, H, W]` row-major tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<f32>) -> Result<Self, VolumeIoError> {
        if dims.contains(&0) {
            return Err(VolumeIoError::DegenerateVolume(dims));
        }
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(voxels.len()) {
            return Err(VolumeIoError::InvalidHeader(format!(
                "{} voxels do not fill a {}x{}x{} grid",
                voxels.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(VolumeIoError::NonFinite);
        }
        Ok(Self { dims, spacing, voxels })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f32; 3]) -> Result<Self, VolumeIoError> {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![0.0; n])
    }

    /// `(nx, ny, nz)`
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    /// Callers must keep the voxels finite.
    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// Axial slice `z` as an `nx * ny` x-fastest slab.
    pub fn slice_z(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.voxels.iter().map(|&v| v as f64).sum::<f64>() / self.voxels.len() as f64
    }
}

/// A 4-d diffusion acquisition: one 3-d volume per gradient direction / b-value.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan4D {
    pub volumes: Vec<Volume3D>,
    pub subject_id: String,
    pub b_values: Option<Vec<f32>>,
    pub gradient_dirs: Option<Vec<[f32; 3]>>,
}

impl Scan4D {
    pub fn new(volumes: Vec<Volume3D>, subject_id: impl Into<String>) -> Result<Self, VolumeIoError> {
        let scan = Self { volumes, subject_id: subject_id.into(), b_values: None, gradient_dirs: None };
        scan.validate()?;
        Ok(scan)
    }

    pub fn with_b_values(mut self, b_values: Vec<f32>) -> Result<Self, VolumeIoError> {
        self.b_values = Some(b_values);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), VolumeIoError> {
        let Some(first) = self.volumes.first() else {
            return Err(VolumeIoError::EmptyScan);
        };
        if let Some(v) = self.volumes.iter().find(|v| v.dims() != first.dims() || v.spacing() != first.spacing()) {
            return Err(VolumeIoError::InvalidHeader(format!(
                "volumes disagree on geometry: {:?} vs {:?}",
                first.dims(),
                v.dims()
            )));
        }
        for (name, len) in [
            ("b-values", self.b_values.as_ref().map(Vec::len)),
            ("gradient directions", self.gradient_dirs.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != self.volumes.len() {
                    return Err(VolumeIoError::SidecarMismatch { what: name, expected: self.volumes.len(), found: len });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// `(nx, ny, nz)` shared by every volume.
    pub fn dims(&self) -> Option<[usize; 3]> {
        self.volumes.first().map(Volume3D::dims)
    }
}

/// The per-direction 3-d volumes of a scan, in acquisition order.
pub fn extract_volumes(scan: &Scan4D) -> Vec<Volume3D> {
    scan.volumes.clone()
}
