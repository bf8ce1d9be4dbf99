//! Single-file NIfTI-1 (`.nii`) reader and writer, plus the `.bval` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::VolumeIoError;
use crate::volume::{Scan4D, Volume3D};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag that precedes voxel data in `.nii` files.
pub const DEFAULT_VOX_OFFSET: usize = 352;

const MAGIC: &[u8; 4] = b"n+1\0";

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Header<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Header<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = &self.bytes[off..off + 2];
        match self.endian {
            Endian::Little => LittleEndian::read_i16(b),
            Endian::Big => BigEndian::read_i16(b),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b = &self.bytes[off..off + 4];
        match self.endian {
            Endian::Little => LittleEndian::read_f32(b),
            Endian::Big => BigEndian::read_f32(b),
        }
    }

    fn f64_at(&self, b: &[u8]) -> f64 {
        match self.endian {
            Endian::Little => LittleEndian::read_f64(b),
            Endian::Big => BigEndian::read_f64(b),
        }
    }

    fn i16_at(&self, b: &[u8]) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(b),
            Endian::Big => BigEndian::read_i16(b),
        }
    }

    fn f32_at(&self, b: &[u8]) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(b),
            Endian::Big => BigEndian::read_f32(b),
        }
    }
}

/// Decodes an in-memory `.nii` image. Every volume of a 4-d file becomes one
/// [`Volume3D`]; a 3-d file yields a single volume.
pub fn decode_nifti(bytes: &[u8], subject_id: impl Into<String>) -> Result<Scan4D, VolumeIoError> {
    if bytes.len() < 4 {
        return Err(VolumeIoError::TruncatedFile { expected: HEADER_SIZE, actual: bytes.len() });
    }
    let endian = if LittleEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endian::Little
    } else if BigEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(VolumeIoError::BadMagic(format!(
            "sizeof_hdr is {}, expected 348",
            LittleEndian::read_i32(bytes)
        )));
    };
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeIoError::TruncatedFile { expected: HEADER_SIZE, actual: bytes.len() });
    }
    let h = Header { bytes, endian };
    if &bytes[344..348] != MAGIC {
        return Err(VolumeIoError::BadMagic(format!("magic {:?}, expected \"n+1\\0\"", &bytes[344..348])));
    }

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeIoError::InvalidHeader(format!("dim[0] = {ndim} outside 1..=7")));
    }
    let ndim = ndim as usize;
    let mut extent = [1usize; 7];
    for (i, e) in extent.iter_mut().enumerate().take(ndim) {
        let d = h.i16(42 + 2 * i);
        if d < 1 {
            return Err(VolumeIoError::InvalidHeader(format!("dim[{}] = {d}", i + 1)));
        }
        *e = d as usize;
    }
    if extent[4..].iter().any(|&e| e != 1) {
        return Err(VolumeIoError::InvalidHeader("images beyond 4 dimensions are not supported".into()));
    }
    let dims = [extent[0], extent[1], extent[2]];
    let n_vols = extent[3];

    let datatype = h.i16(70);
    let bytes_per_voxel = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(VolumeIoError::UnsupportedDtype(other)),
    };

    let spacing = [1, 2, 3].map(|i| {
        let s = h.f32(76 + 4 * i);
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    });

    let vox_offset = h.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(VolumeIoError::InvalidHeader(format!("vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;

    let slope = h.f32(112);
    let inter = h.f32(116);
    let scaling = (slope.is_finite() && slope != 0.0 && inter.is_finite())
        .then_some((slope as f64, inter as f64))
        .filter(|&s| s != (1.0, 0.0));

    let per_volume = dims[0] * dims[1] * dims[2];
    let expected = per_volume
        .checked_mul(n_vols)
        .and_then(|n| n.checked_mul(bytes_per_voxel))
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| VolumeIoError::InvalidHeader("image size overflows".into()))?;
    if bytes.len() < expected {
        return Err(VolumeIoError::TruncatedFile { expected, actual: bytes.len() });
    }

    let payload = &bytes[offset..expected];
    let stride = per_volume * bytes_per_voxel;
    let mut volumes = Vec::with_capacity(n_vols);
    for chunk in payload.chunks_exact(stride) {
        let voxels: Vec<f32> = chunk
            .chunks_exact(bytes_per_voxel)
            .map(|b| {
                let raw = match datatype {
                    DT_INT16 => h.i16_at(b) as f64,
                    DT_FLOAT32 => {
                        let v = h.f32_at(b);
                        if scaling.is_none() {
                            return sanitize(v);
                        }
                        v as f64
                    }
                    _ => h.f64_at(b),
                };
                let v = match scaling {
                    Some((m, c)) => raw * m + c,
                    None => raw,
                };
                sanitize(v as f32)
            })
            .collect();
        volumes.push(Volume3D::new(dims, spacing, voxels)?);
    }
    Scan4D::new(volumes, subject_id)
}

#[inline]
fn sanitize(v: f32) -> f32 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Serializes a scan as little-endian float32 NIfTI-1 with identity scaling.
pub fn encode_nifti(scan: &Scan4D) -> Result<Vec<u8>, VolumeIoError> {
    scan.validate()?;
    let first = &scan.volumes[0];
    let dims = first.dims();
    let too_big = |d: usize| d > i16::MAX as usize;
    if dims.iter().any(|&d| too_big(d)) || too_big(scan.volumes.len()) {
        return Err(VolumeIoError::InvalidHeader("extent exceeds the NIfTI-1 limit of 32767".into()));
    }
    let n_vols = scan.volumes.len();
    let per_volume = first.len();
    let mut out = vec![0u8; DEFAULT_VOX_OFFSET + per_volume * n_vols * 4];

    LittleEndian::write_i32(&mut out[0..], HEADER_SIZE as i32);
    out[38] = b'r';
    let ndim: i16 = if n_vols > 1 { 4 } else { 3 };
    let dim = [ndim, dims[0] as i16, dims[1] as i16, dims[2] as i16, n_vols as i16, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut out[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut out[70..], DT_FLOAT32);
    LittleEndian::write_i16(&mut out[72..], 32);
    let sp = first.spacing();
    let pixdim = [1.0, sp[0], sp[1], sp[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut out[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut out[108..], DEFAULT_VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut out[112..], 1.0);
    LittleEndian::write_f32(&mut out[116..], 0.0);
    // xyzt_units: mm + s
    out[123] = 2 | 8;
    let descrip = b"qcnet";
    out[148..148 + descrip.len()].copy_from_slice(descrip);
    out[344..348].copy_from_slice(MAGIC);

    let mut pos = DEFAULT_VOX_OFFSET;
    for vol in &scan.volumes {
        for &v in vol.voxels() {
            LittleEndian::write_f32(&mut out[pos..], v);
            pos += 4;
        }
    }
    Ok(out)
}

/// The b-value sidecar path for a scan: `scan.nii` -> `scan.bval`.
pub fn bval_path(path: &Path) -> PathBuf {
    path.with_extension("bval")
}

/// Reads a `.nii` file. When a `.bval` sidecar sits next to it, its values
/// are attached and must match the volume count. The subject id is the file stem.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Scan4D, VolumeIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(VolumeIoError::io(path))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let scan = decode_nifti(&bytes, stem)?;
    let sidecar = bval_path(path);
    if sidecar.is_file() {
        let text = fs::read_to_string(&sidecar).map_err(VolumeIoError::io(&sidecar))?;
        return scan.with_b_values(parse_bvals(&text)?);
    }
    Ok(scan)
}

/// Writes `scan` to `path`, plus a `.bval` sidecar when the scan carries b-values.
pub fn write_nifti(scan: &Scan4D, path: impl AsRef<Path>) -> Result<(), VolumeIoError> {
    let path = path.as_ref();
    let bytes = encode_nifti(scan)?;
    fs::write(path, bytes).map_err(VolumeIoError::io(path))?;
    if let Some(b) = &scan.b_values {
        let sidecar = bval_path(path);
        fs::write(&sidecar, format_bvals(b)).map_err(VolumeIoError::io(&sidecar))?;
    }
    Ok(())
}

pub fn parse_bvals(text: &str) -> Result<Vec<f32>, VolumeIoError> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| VolumeIoError::InvalidHeader(format!("bad b-value {t:?}")))
        })
        .collect()
}

pub fn format_bvals(b: &[f32]) -> String {
    let mut s = b.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}
