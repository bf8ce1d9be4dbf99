//! Brain-like synthetic volumes and artifact injectors.

mod artifacts;
mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::VolumeIoError;
use crate::volume::Volume3D;

pub use artifacts::{inject_artifact, sample_artifact, ArtifactKind, ArtifactSpec, Axis};
pub use dataset::{generate_dataset, GeneratorConfig, KindMix, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),

    #[error("artifact region out of bounds: {0}")]
    RegionOutOfBounds(String),

    #[error(transparent)]
    Volume(#[from] VolumeIoError),
}

/// Textured ellipsoid in a zero background with Rician noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// `(nx, ny, nz)`
    pub dims: [usize; 3],
    /// Ellipsoid semi-axes in voxels; must fit inside `dims`.
    pub semi_axes: [f64; 3],
    /// Gaussian smoothing of the texture noise, in voxels.
    pub texture_sigma: f64,
    /// Rician noise sigma as a fraction of the tissue intensity scale.
    pub noise_level: f64,
    /// Global tissue intensity multiplier.
    pub intensity_scale: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 24],
            semi_axes: [12.0, 13.5, 9.5],
            texture_sigma: 1.5,
            noise_level: 0.04,
            intensity_scale: 1.0,
            seed: 0,
        }
    }
}

/// Tissue intensities inside the mask span this range (before scaling).
pub const TISSUE_RANGE: (f32, f32) = (0.3, 1.0);

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidConfig(m));
        if self.dims.contains(&0) {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        for (a, &d) in self.semi_axes.iter().zip(&self.dims) {
            if !(a.is_finite() && *a > 0.0 && 2.0 * a <= d as f64) {
                return bad(format!("semi-axes {:?} do not fit in {:?}", self.semi_axes, self.dims));
            }
        }
        if !(self.texture_sigma.is_finite() && self.texture_sigma >= 0.0) {
            return bad(format!("texture_sigma = {} must be >= 0", self.texture_sigma));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return bad(format!("noise_level = {} must be >= 0", self.noise_level));
        }
        if !(self.intensity_scale.is_finite() && self.intensity_scale > 0.0) {
            return bad(format!("intensity_scale = {} must be > 0", self.intensity_scale));
        }
        Ok(())
    }

    fn centre(&self) -> [f64; 3] {
        self.dims.map(|d| (d as f64 - 1.0) / 2.0)
    }

    /// True for voxels inside the ellipsoid.
    pub fn mask(&self) -> Vec<bool> {
        let [nx, ny, nz] = self.dims;
        let c = self.centre();
        let a = self.semi_axes;
        let mut m = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let q: f64 = [x, y, z].into_iter().zip(c.into_iter().zip(a)).map(|(p, (c, a))| ((p as f64 - c) / a).powi(2)).sum();
                    m.push(q <= 1.0);
                }
            }
        }
        m
    }
}

/// Same-size separable Gaussian blur with clamped borders.
pub fn gaussian_smooth(voxels: &[f32], dims: [usize; 3], sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return voxels.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();

    let [nx, ny, nz] = dims;
    let strides = [1, nx, nx * ny];
    let mut cur = voxels.to_vec();
    for axis in 0..3 {
        let n = dims[axis] as isize;
        let stride = strides[axis];
        let mut next = vec![0.0; cur.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x, y, z];
                    let base = x + nx * (y + ny * z) - p[axis] * stride;
                    let mut acc = 0.0;
                    for (k, w) in kernel.iter().enumerate() {
                        let q = (p[axis] as isize + k as isize - radius).clamp(0, n - 1) as usize;
                        acc += w * cur[base + q * stride];
                    }
                    next[x + nx * (y + ny * z)] = acc;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Noise-free textured ellipsoid: smoothed white noise rescaled to
/// [`TISSUE_RANGE`] (times `intensity_scale`) inside the mask, zero outside.
pub fn phantom_anatomy(config: &PhantomConfig, rng: &mut impl Rng) -> Result<Vec<f32>, PhantomError> {
    config.validate()?;
    let n: usize = config.dims.iter().product();
    let white: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let smooth = gaussian_smooth(&white, config.dims, config.texture_sigma);
    let mask = config.mask();
    let (lo, hi) = smooth
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let (t0, t1) = TISSUE_RANGE;
    let scale = config.intensity_scale as f32;
    Ok(smooth
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| {
            if !m {
                0.0
            } else if hi > lo {
                scale * (t0 + (t1 - t0) * (v - lo) / (hi - lo))
            } else {
                scale * (t0 + t1) / 2.0
            }
        })
        .collect())
}

/// Magnitude of the signal plus complex Gaussian noise: `|s + n1 + i n2|`.
pub fn add_rician_noise(voxels: &mut [f32], sigma: f64, rng: &mut impl Rng) {
    if sigma <= 0.0 {
        return;
    }
    let s = sigma as f32;
    for v in voxels {
        let n1: f32 = StandardNormal.sample(rng);
        let n2: f32 = StandardNormal.sample(rng);
        *v = ((*v + s * n1).powi(2) + (s * n2).powi(2)).sqrt();
    }
}

/// A single phantom volume, deterministic in `config.seed`.
pub fn generate_phantom(config: &PhantomConfig) -> Result<Volume3D, PhantomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vox = phantom_anatomy(config, &mut rng)?;
    add_rician_noise(&mut vox, config.noise_level * config.intensity_scale, &mut rng);
    Ok(Volume3D::new(config.dims, [1.0; 3], vox)?)
}
