use qcnet_core::manifest::{Manifest, VolumeRecord};
use qcnet_core::preprocess::percentile;
use qcnet_core::{preprocess, read_nifti, Volume3D, VolumeIoError};

/// Reads the record's volume, preprocessed to `dims` when given.
pub fn load_volume(manifest: &Manifest, record: &VolumeRecord, dims: Option<[usize; 3]>) -> Result<Volume3D, VolumeIoError> {
    let path = manifest.resolve(record);
    let scan = read_nifti(&path)?;
    let count = scan.len();
    let v = scan.volumes.into_iter().nth(record.volume_index).ok_or_else(|| VolumeIoError::VolumeIndexOutOfRange {
        id: record.id.clone(),
        index: record.volume_index,
        count,
        path: path.clone(),
    })?;
    match dims {
        Some(d) => preprocess(&v, d),
        None => Ok(v),
    }
}

/// Intensity window `[p1, p99]` over the whole volume.
pub fn window(v: &Volume3D) -> (f32, f32) {
    (percentile(v.voxels(), 0.01), percentile(v.voxels(), 0.99))
}

/// Axial slice `k` as 8-bit gray, scaled linearly so `lo` maps to 0 and
/// `hi` to 255. A flat window renders black.
pub fn slice_gray(v: &Volume3D, k: usize, (lo, hi): (f32, f32)) -> Option<Vec<u8>> {
    if k >= v.dims()[2] {
        return None;
    }
    let span = hi - lo;
    Some(
        v.slice_z(k)
            .iter()
            .map(|&x| if span > 0.0 { ((x - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect(),
    )
}

/// PNG of axial slice `k`, `nx` wide and `ny` tall.
pub fn slice_png(v: &Volume3D, k: usize) -> Option<Vec<u8>> {
    let gray = slice_gray(v, k, window(v))?;
    let [nx, ny, _] = v.dims();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, nx as u32, ny as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("in-memory write");
    w.write_image_data(&gray).expect("in-memory write");
    w.finish().expect("in-memory write");
    Some(out)
}
