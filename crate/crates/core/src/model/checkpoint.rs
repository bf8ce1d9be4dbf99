//! Binary checkpoint layout (all integers u32 little-endian):
//!
//! ```text
//! "QC3D" | version | config-JSON length | config JSON | tensor count |
//! per tensor: name length | name (UTF-8) | ndim | dims... | f32 LE data |
//! f32 decision threshold
//! ```
//!
//! Tensors are the parameters in model order followed by each batch-norm
//! layer's `running_mean` and `running_var`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use qcnet_tensor::{RunningStats, Tensor};

use super::densenet::{BnBuffer, Plan};
use super::{Model, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QC3D";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    push_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    push_u32(out, shape.len());
    for &d in shape {
        push_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model, threshold: f32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION as usize);
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    push_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    push_u32(&mut out, model.params().len() + 2 * model.buffers().len());
    for p in model.params() {
        push_tensor(&mut out, p.name(), p.tensor().shape(), p.tensor().data());
    }
    for b in model.buffers() {
        let c = b.stats.channels();
        push_tensor(&mut out, &format!("{}.running_mean", b.name), &[c], &b.stats.mean);
        push_tensor(&mut out, &format!("{}.running_var", b.name), &[c], &b.stats.var);
    }
    out.extend_from_slice(&threshold.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::CorruptTensor(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, ModelError> {
        Ok(LittleEndian::read_u32(self.take(4, what)?) as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Decodes a checkpoint and returns the model with the threshold stored in it.
/// Every tensor must be present exactly once with the shape the config implies.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, f32), ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|_| {
        let mut m = [0u8; 4];
        m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
        ModelError::BadMagic(m)
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic(magic.try_into().expect("4 bytes")));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| ModelError::InvalidConfig(format!("checkpoint config: {e}")))?;
    let plan = Plan::new(&config)?;

    let mut expected: HashMap<String, Vec<usize>> =
        plan.specs.iter().map(|s| (s.name.clone(), s.shape.clone())).collect();
    for (name, c) in &plan.bn {
        expected.insert(format!("{name}.running_mean"), vec![*c]);
        expected.insert(format!("{name}.running_var"), vec![*c]);
    }
    let count = r.u32("tensor count")?;
    if count != expected.len() {
        return Err(ModelError::CorruptTensor(format!("{count} tensors, config implies {}", expected.len())));
    }

    let mut found: HashMap<String, Vec<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| ModelError::CorruptTensor("tensor name is not UTF-8".into()))?
            .to_owned();
        let Some(shape) = expected.get(&name) else {
            return Err(ModelError::CorruptTensor(format!("unexpected tensor {name:?}")));
        };
        let ndim = r.u32("ndim")?;
        if ndim != shape.len() {
            return Err(ModelError::CorruptTensor(format!("{name}: {ndim} dims, expected {}", shape.len())));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dims")?);
        }
        if &dims != shape {
            return Err(ModelError::CorruptTensor(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if r.remaining() < n * 4 {
            return Err(ModelError::CorruptTensor(format!(
                "{name}: payload needs {} bytes, {} remain",
                n * 4,
                r.remaining()
            )));
        }
        let data: Vec<f32> = r.take(n * 4, &name)?.chunks_exact(4).map(LittleEndian::read_f32).collect();
        if found.insert(name.clone(), data).is_some() {
            return Err(ModelError::CorruptTensor(format!("duplicate tensor {name:?}")));
        }
    }
    let threshold = f32::from_le_bytes(r.take(4, "threshold")?.try_into().expect("4 bytes"));
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelError::CorruptTensor(format!("threshold {threshold} outside [0, 1]")));
    }
    if r.remaining() != 0 {
        return Err(ModelError::CorruptTensor(format!("{} trailing bytes", r.remaining())));
    }

    let mut take = |name: &str| found.remove(name).expect("count and names checked");
    let mut params = Vec::with_capacity(plan.specs.len());
    for spec in &plan.specs {
        params.push(Model::param(spec.name.clone(), Tensor::new(&spec.shape, take(&spec.name))?));
    }
    let buffers = plan
        .bn
        .iter()
        .map(|(name, _)| BnBuffer {
            name: name.clone(),
            stats: RunningStats { mean: take(&format!("{name}.running_mean")), var: take(&format!("{name}.running_var")) },
        })
        .collect();
    Ok((Model::from_parts(config, plan, params, buffers), threshold))
}

pub fn save_checkpoint(model: &Model, threshold: f32, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model, threshold))
        .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, f32), ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes)
}
