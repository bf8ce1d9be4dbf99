use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dropout,
    Ghosting,
    IntersliceInstability,
    Herringbone,
    ChemicalShift,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Dropout,
        ArtifactKind::Ghosting,
        ArtifactKind::IntersliceInstability,
        ArtifactKind::Herringbone,
        ArtifactKind::ChemicalShift,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// One artifact with its parameters. Coordinates are voxel indices
/// `(x, y, z)`; ranges are half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArtifactSpec {
    /// Axial slices `start..end` scaled by `attenuation`.
    Dropout { start: usize, end: usize, attenuation: f64 },
    /// Adds `alpha` times a copy shifted by `shift_fraction` of the extent along `axis`.
    Ghosting { axis: Axis, shift_fraction: f64, alpha: f64 },
    /// Slices with `z % 2 == parity` scaled by `1 - depth`, the others by `1 + depth`.
    IntersliceInstability { depth: f64, parity: usize },
    /// Adds `amplitude * sin(f x + g y + h z)`.
    Herringbone { frequency: [f64; 3], amplitude: f64 },
    /// Moves the contents of the box `min..max` by `shift` voxels along
    /// `axis`; vacated voxels drop to the zero background.
    ChemicalShift { min: [usize; 3], max: [usize; 3], shift: isize, axis: Axis },
}

impl ArtifactSpec {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            ArtifactSpec::Dropout { .. } => ArtifactKind::Dropout,
            ArtifactSpec::Ghosting { .. } => ArtifactKind::Ghosting,
            ArtifactSpec::IntersliceInstability { .. } => ArtifactKind::IntersliceInstability,
            ArtifactSpec::Herringbone { .. } => ArtifactKind::Herringbone,
            ArtifactSpec::ChemicalShift { .. } => ArtifactKind::ChemicalShift,
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), PhantomError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PhantomError::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
            }
        };
        let oob = |m: String| Err(PhantomError::RegionOutOfBounds(m));
        match *self {
            ArtifactSpec::Dropout { start, end, attenuation } => {
                unit("attenuation", attenuation)?;
                if start >= end || end > dims[2] {
                    return oob(format!("slices {start}..{end} in {} slices", dims[2]));
                }
            }
            ArtifactSpec::Ghosting { shift_fraction, alpha, .. } => {
                unit("alpha", alpha)?;
                unit("|shift_fraction|", shift_fraction.abs())?;
            }
            ArtifactSpec::IntersliceInstability { depth, parity } => {
                unit("depth", depth)?;
                if parity > 1 {
                    return Err(PhantomError::InvalidConfig(format!("parity = {parity} must be 0 or 1")));
                }
            }
            ArtifactSpec::Herringbone { frequency, amplitude } => {
                if !(amplitude.is_finite() && amplitude >= 0.0) || frequency.iter().any(|f| !f.is_finite()) {
                    return Err(PhantomError::InvalidConfig("herringbone needs finite frequency and amplitude >= 0".into()));
                }
            }
            ArtifactSpec::ChemicalShift { min, max, shift, axis } => {
                for a in 0..3 {
                    if min[a] >= max[a] || max[a] > dims[a] {
                        return oob(format!("box {min:?}..{max:?} in {dims:?}"));
                    }
                }
                let a = axis.index();
                let lo = min[a] as isize + shift;
                let hi = max[a] as isize + shift;
                if lo < 0 || hi > dims[a] as isize {
                    return oob(format!("box {min:?}..{max:?} shifted by {shift} along {axis:?} leaves {dims:?}"));
                }
            }
        }
        Ok(())
    }
}

/// Applies `spec` to a copy of `v`; the result is clamped to be non-negative.
pub fn inject_artifact(v: &Volume3D, spec: &ArtifactSpec) -> Result<Volume3D, PhantomError> {
    let dims = v.dims();
    spec.validate(dims)?;
    let [nx, ny, nz] = dims;
    let src = v.voxels();
    let mut out = src.to_vec();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);

    match *spec {
        ArtifactSpec::Dropout { start, end, attenuation } => {
            for s in &mut out[start * nx * ny..end * nx * ny] {
                *s *= attenuation as f32;
            }
        }
        ArtifactSpec::Ghosting { axis, shift_fraction, alpha } => {
            let a = axis.index();
            let shift = (shift_fraction * dims[a] as f64).round() as isize;
            let alpha = alpha as f32;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let mut p = [x as isize, y as isize, z as isize];
                        p[a] -= shift;
                        if p[a] >= 0 && p[a] < dims[a] as isize {
                            out[idx(x, y, z)] += alpha * src[idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                        }
                    }
                }
            }
        }
        ArtifactSpec::IntersliceInstability { depth, parity } => {
            for z in 0..nz {
                let f = if z % 2 == parity { 1.0 - depth } else { 1.0 + depth } as f32;
                for s in &mut out[z * nx * ny..(z + 1) * nx * ny] {
                    *s *= f;
                }
            }
        }
        ArtifactSpec::Herringbone { frequency: [f, g, h], amplitude } => {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let phase = f * x as f64 + g * y as f64 + h * z as f64;
                        out[idx(x, y, z)] += (amplitude * phase.sin()) as f32;
                    }
                }
            }
        }
        ArtifactSpec::ChemicalShift { min, max, shift, axis } => {
            let a = axis.index();
            for z in min[2]..max[2] {
                for y in min[1]..max[1] {
                    for x in min[0]..max[0] {
                        out[idx(x, y, z)] = 0.0;
                    }
                }
            }
            for z in min[2]..max[2] {
                for y in min[1]..max[1] {
                    for x in min[0]..max[0] {
                        let mut d = [x, y, z];
                        d[a] = (d[a] as isize + shift) as usize;
                        out[idx(d[0], d[1], d[2])] = src[idx(x, y, z)];
                    }
                }
            }
        }
    }
    for s in &mut out {
        *s = s.max(0.0);
    }
    Ok(Volume3D::new(dims, v.spacing(), out)?)
}

/// Draws parameters for `kind` on a `dims` grid. `severity` in (0, 1]
/// scales every effect size; `intensity` is the tissue intensity scale the
/// additive artifacts are measured against.
pub fn sample_artifact(kind: ArtifactKind, dims: [usize; 3], severity: f64, intensity: f64, rng: &mut impl Rng) -> ArtifactSpec {
    let [nx, ny, nz] = dims;
    let s = severity.clamp(0.0, 1.0);
    match kind {
        ArtifactKind::Dropout => {
            let len = rng.random_range(1..=3usize).min(nz);
            let lo = nz / 4;
            let hi = (3 * nz / 4).saturating_sub(len).max(lo);
            let start = rng.random_range(lo..=hi).min(nz - len);
            let base: f64 = rng.random_range(0.0..=0.3);
            ArtifactSpec::Dropout { start, end: start + len, attenuation: 1.0 - s * (1.0 - base) }
        }
        ArtifactKind::Ghosting => {
            let axis = if rng.random_bool(0.5) { Axis::Y } else { Axis::X };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            ArtifactSpec::Ghosting {
                axis,
                shift_fraction: sign * rng.random_range(0.25..=0.5),
                alpha: s * rng.random_range(0.4..=0.6),
            }
        }
        ArtifactKind::IntersliceInstability => ArtifactSpec::IntersliceInstability {
            depth: s * rng.random_range(0.25..=0.4),
            parity: rng.random_range(0..2),
        },
        ArtifactKind::Herringbone => {
            let theta = rng.random_range(0.0..2.0 * PI);
            let omega = rng.random_range(1.6..=2.4);
            ArtifactSpec::Herringbone {
                frequency: [omega * theta.cos(), omega * theta.sin(), rng.random_range(-0.3..=0.3)],
                amplitude: s * intensity * rng.random_range(0.2..=0.3),
            }
        }
        ArtifactKind::ChemicalShift => {
            let axis = if rng.random_bool(0.5) { Axis::X } else { Axis::Y };
            let a = axis.index();
            let magnitude = ((s * rng.random_range(4.0..=6.0)).round() as isize).max(1);
            let shift = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            let mut min = [0; 3];
            let mut max = [0; 3];
            for i in 0..3 {
                let d = dims[i];
                let size = ((d as f64 * rng.random_range(0.3..=0.45)).round() as usize).clamp(1, d);
                // keep room for the shift along the moving axis
                let margin = if i == a { magnitude as usize } else { 0 };
                let lo = margin.max(d / 4).min(d.saturating_sub(size + margin));
                let hi = d.saturating_sub(size + margin).max(lo).min(3 * d / 4);
                let start = rng.random_range(lo..=hi.max(lo));
                min[i] = start;
                max[i] = start + size;
            }
            let spec = ArtifactSpec::ChemicalShift { min, max, shift, axis };
            // Degenerate grids may not have room for the shift: fall back to no motion.
            if spec.validate([nx, ny, nz]).is_ok() {
                spec
            } else {
                ArtifactSpec::ChemicalShift { min, max: min.map(|m| m + 1), shift: 0, axis }
            }
        }
    }
}
