use serde::{Deserialize, Serialize};

use super::ModelError;
use qcnet_tensor::{conv_output_extent, pool_output_extent};

// Generous caps that keep a hostile config from requesting absurd allocations.
const MAX_EXTENT: usize = 4096;
const MAX_CHANNELS: usize = 4096;
const MAX_BLOCKS: usize = 32;
const MAX_LAYERS: usize = 64;
const MAX_CLASSES: usize = 1024;

/// Topology and initialization seed of the classifier. `input_dims` is
/// `(tx, ty, tz)`; batches are laid out `[N, 1, tz, ty, tx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dims: [usize; 3],
    pub growth_rate: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub num_dense_blocks: usize,
    pub layers_per_block: usize,
    pub transition_compression: f64,
    pub num_classes: usize,
    pub seed: u64,
}

/// Channel count and `(x, y, z)` extent after one stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub channels: usize,
    pub dims: [usize; 3],
}

impl ModelConfig {
    fn with_dims(input_dims: [usize; 3], seed: u64) -> Self {
        Self {
            input_dims,
            growth_rate: 12,
            stem_channels: 24,
            stem_stride: 2,
            num_dense_blocks: 3,
            layers_per_block: 2,
            transition_compression: 0.5,
            num_classes: 2,
            seed,
        }
    }

    /// 32x32x24 input, sized for CPU training.
    pub fn desk_32(seed: u64) -> Self {
        Self::with_dims([32, 32, 24], seed)
    }

    /// 96x96x70 input, the full-resolution layout.
    pub fn paper_96(seed: u64) -> Self {
        Self::with_dims([96, 96, 70], seed)
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "desk-32" => Some(Self::desk_32(seed)),
            "paper-96" => Some(Self::paper_96(seed)),
            _ => None,
        }
    }

    /// Channels produced by a transition fed `c` channels: `ceil(theta * c)`.
    pub fn compressed(&self, c: usize) -> usize {
        ((self.transition_compression * c as f64 - 1e-9).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.input_dims.iter().any(|&d| d == 0 || d > MAX_EXTENT) {
            return bad(format!("input_dims {:?} must lie in 1..={MAX_EXTENT}", self.input_dims));
        }
        for (name, v) in [("growth_rate", self.growth_rate), ("stem_channels", self.stem_channels)] {
            if v == 0 || v > MAX_CHANNELS {
                return bad(format!("{name} = {v} must lie in 1..={MAX_CHANNELS}"));
            }
        }
        if !(1..=2).contains(&self.stem_stride) {
            return bad(format!("stem_stride = {} must be 1 or 2", self.stem_stride));
        }
        if self.num_dense_blocks == 0 || self.num_dense_blocks > MAX_BLOCKS {
            return bad(format!("num_dense_blocks = {} must lie in 1..={MAX_BLOCKS}", self.num_dense_blocks));
        }
        if self.layers_per_block == 0 || self.layers_per_block > MAX_LAYERS {
            return bad(format!("layers_per_block = {} must lie in 1..={MAX_LAYERS}", self.layers_per_block));
        }
        let theta = self.transition_compression;
        if !(theta > 0.0 && theta <= 1.0) {
            return bad(format!("transition_compression = {theta} must lie in (0, 1]"));
        }
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return bad(format!("num_classes = {} must lie in 2..={MAX_CLASSES}", self.num_classes));
        }
        Ok(())
    }

    /// Shape after every stage, from the stem to the classifier. Fails with
    /// `SpatialUnderflow` when any extent reaches zero before global pooling.
    pub fn trace(&self) -> Result<Vec<StageShape>, ModelError> {
        self.validate()?;
        let mut out = Vec::new();
        let mut dims = self.input_dims;
        let underflow = |stage: String, dims| ModelError::SpatialUnderflow { stage, dims };

        let mut next = [0; 3];
        for (n, &d) in next.iter_mut().zip(&dims) {
            *n = conv_output_extent(d, 3, self.stem_stride, 1).unwrap_or(0);
        }
        if next.contains(&0) {
            return Err(underflow("stem".into(), next));
        }
        dims = next;
        let mut channels = self.stem_channels;
        out.push(StageShape { stage: "stem".into(), channels, dims });

        for b in 1..=self.num_dense_blocks {
            channels += self.layers_per_block * self.growth_rate;
            out.push(StageShape { stage: format!("block{b}"), channels, dims });
            if b == self.num_dense_blocks {
                break;
            }
            dims = dims.map(|d| pool_output_extent(d, 2, 2).unwrap_or(0));
            channels = self.compressed(channels);
            if dims.contains(&0) {
                return Err(underflow(format!("transition{b}"), dims));
            }
            out.push(StageShape { stage: format!("transition{b}"), channels, dims });
        }
        out.push(StageShape { stage: "gap".into(), channels, dims: [1, 1, 1] });
        out.push(StageShape { stage: "dense".into(), channels: self.num_classes, dims: [1, 1, 1] });
        Ok(out)
    }
}
