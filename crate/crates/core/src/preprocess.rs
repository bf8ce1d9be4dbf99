//! Fixed-size network input: in-plane resampling, slice-axis crop/pad, and
//! robust intensity normalization.

use crate::error::VolumeIoError;
use crate::volume::Volume3D;

/// Upper clamp applied after dividing by the 99th percentile.
pub const INTENSITY_CEILING: f32 = 2.0;

/// Brings `v` to `target = (tx, ty, tz)`:
///
/// 1. x/y are resampled to `(tx, ty)` with linear interpolation (half-pixel
///    centres, so equal extents are an exact identity);
/// 2. z is centre-cropped or zero-padded to `tz`, the odd leftover going to
///    the trailing side;
/// 3. intensities are divided by their 99th percentile (nearest rank) and
///    clamped to `[0, 2]`. A non-positive percentile leaves all zeros.
///
/// The percentile is taken on the resampled grid, so a second application is
/// a no-op.
pub fn preprocess(v: &Volume3D, target: [usize; 3]) -> Result<Volume3D, VolumeIoError> {
    if target.contains(&0) {
        return Err(VolumeIoError::DegenerateVolume(target));
    }
    let [nx, ny, nz] = v.dims();
    if nx * ny * nz == 0 {
        return Err(VolumeIoError::DegenerateVolume(v.dims()));
    }
    let [tx, ty, tz] = target;

    let resized = resize_inplane(v.voxels(), [nx, ny, nz], tx, ty);
    let mut out = fit_slices(&resized, tx * ty, nz, tz);
    normalize(&mut out);

    let sp = v.spacing();
    let spacing = [sp[0] * nx as f32 / tx as f32, sp[1] * ny as f32 / ty as f32, sp[2]];
    Volume3D::new(target, spacing, out)
}

/// Linear resampling of every axial slice from `nx * ny` to `tx * ty`.
pub fn resize_inplane(voxels: &[f32], dims: [usize; 3], tx: usize, ty: usize) -> Vec<f32> {
    let [nx, ny, nz] = dims;
    if nx == tx && ny == ty {
        return voxels.to_vec();
    }
    let xs = axis_taps(nx, tx);
    let ys = axis_taps(ny, ty);
    let mut out = Vec::with_capacity(tx * ty * nz);
    for z in 0..nz {
        let slab = &voxels[z * nx * ny..(z + 1) * nx * ny];
        for &(y0, y1, wy) in &ys {
            let r0 = &slab[y0 * nx..(y0 + 1) * nx];
            let r1 = &slab[y1 * nx..(y1 + 1) * nx];
            for &(x0, x1, wx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * wx;
                out.push(top + (bot - top) * wy);
            }
        }
    }
    out
}

/// For each output index: the two source neighbours and the weight of the second.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Centre-crops or zero-pads `nz` slabs of `slab` voxels to `tz` slabs.
pub fn fit_slices(voxels: &[f32], slab: usize, nz: usize, tz: usize) -> Vec<f32> {
    let mut out = vec![0.0; slab * tz];
    if nz >= tz {
        let start = (nz - tz) / 2;
        out.copy_from_slice(&voxels[start * slab..(start + tz) * slab]);
    } else {
        let before = (tz - nz) / 2;
        out[before * slab..(before + nz) * slab].copy_from_slice(&voxels[..nz * slab]);
    }
    out
}

/// Nearest-rank percentile (`q` in (0, 1]) of a non-empty slice.
pub fn percentile(values: &[f32], q: f64) -> f32 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(rank - 1, f32::total_cmp);
    *v
}

fn normalize(voxels: &mut [f32]) {
    let p99 = percentile(voxels, 0.99);
    if p99 <= 0.0 || !p99.is_finite() {
        voxels.fill(0.0);
        return;
    }
    for v in voxels.iter_mut() {
        *v = (*v / p99).clamp(0.0, INTENSITY_CEILING);
    }
}
