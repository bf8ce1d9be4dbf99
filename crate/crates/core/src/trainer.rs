//! Training loop, fine-tuning and fine-tune subset selection.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use qcnet_tensor::{adam_step, AdamConfig, AdamState, TensorError};

use crate::data::{batch_order, load_dataset, DataError, Dataset};
use crate::manifest::Manifest;
use crate::model::{save_checkpoint, Model, ModelError};
use crate::qc::{metrics_at, predict_dataset, Metrics, QcError, ThresholdPolicy};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Qc(#[from] QcError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write `epoch-NNN.qc3d` into `checkpoint_dir` every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub finetune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 5, lr: 1e-4, seed: 0, checkpoint_every: None, checkpoint_dir: None, finetune_epochs: 5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(TrainError::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean per-volume cross-entropy of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation metrics at threshold 0.5 after each epoch; `None` when no
    /// labeled validation set was given.
    pub val_metrics: Vec<Option<Metrics>>,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }
}

fn run_epochs(
    model: &mut Model,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
    epochs: usize,
) -> Result<TrainHistory, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let adam = AdamConfig::with_lr(config.lr);
    let mut states: Vec<AdamState<f32>> =
        model.params().iter().map(|p| AdamState::new(p.tensor().len(), adam)).collect::<Result<_, _>>()?;
    let val_labels = val.and_then(Dataset::labels).filter(|l| !l.is_empty());
    let mut history = TrainHistory::default();

    // Per-epoch shuffle seeds come from one stream so epochs differ but runs repeat.
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    for epoch in 1..=epochs {
        let order = batch_order(train.len(), config.batch_size, true, rand::Rng::random(&mut seeds))?;
        let mut loss_sum = 0.0;
        for ix in &order {
            let batch = train.batch(ix, true)?;
            let (loss, grads) = model.loss_and_grads(&batch.tensor, &batch.targets)?;
            loss_sum += loss * ix.len() as f64;
            for ((p, g), st) in model.params_mut().iter_mut().zip(&grads).zip(&mut states) {
                adam_step(p.data_mut(), g, st)?;
            }
        }
        history.train_loss.push(loss_sum / train.len() as f64);

        let metrics = match (val, &val_labels) {
            (Some(v), Some(labels)) => {
                Some(metrics_at(&predict_dataset(model, v)?, labels, &ThresholdPolicy::default())?)
            }
            _ => None,
        };
        history.val_metrics.push(metrics);

        if let (Some(every), Some(dir)) = (config.checkpoint_every, &config.checkpoint_dir) {
            if epoch % every == 0 {
                let path = dir.join(format!("epoch-{epoch:03}.qc3d"));
                save_checkpoint(model, ThresholdPolicy::DEFAULT_THRESHOLD as f32, path)?;
            }
        }
    }
    Ok(history)
}

/// Trains for `config.epochs` with Adam on mean cross-entropy, evaluating on
/// `val` (eval mode, threshold 0.5) after each epoch. No early stopping.
pub fn train_on(
    model: Model,
    train: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    let mut model = model;
    let history = run_epochs(&mut model, train, val, config, config.epochs)?;
    Ok((model, history))
}

/// [`train_on`] with volumes read from manifests at the model's input size.
pub fn train(
    model: Model,
    train: &Manifest,
    val: &Manifest,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    let dims = model.config().input_dims;
    let train_ds = load_dataset(train, dims)?;
    let val_ds = load_dataset(val, dims)?;
    train_on(model, &train_ds, Some(&val_ds), config)
}

/// Continues training every layer of a copy of `base` on `subset` for
/// `config.finetune_epochs`, starting from fresh optimizer moments.
pub fn finetune_on(base: &Model, subset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainHistory), TrainError> {
    let mut model = base.clone();
    let history = run_epochs(&mut model, subset, None, config, config.finetune_epochs)?;
    Ok((model, history))
}

pub fn finetune(base: &Model, subset: &Manifest, config: &TrainConfig) -> Result<(Model, TrainHistory), TrainError> {
    let ds = load_dataset(subset, base.config().input_dims)?;
    finetune_on(base, &ds, config)
}

/// Number of volumes a fraction selects: `ceil(fraction * n)`.
pub fn subset_size(n: usize, fraction: f64) -> Result<usize, TrainError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::InvalidFraction(fraction));
    }
    // The small slack keeps 0.1 * 2220 (= 222.00000000000003) at 222.
    Ok(((fraction * n as f64 - 1e-9).ceil() as usize).min(n))
}

/// Uniform sample of `ceil(fraction * n)` volumes without replacement,
/// returned in manifest order.
pub fn select_finetune_subset(manifest: &Manifest, fraction: f64, seed: u64) -> Result<Manifest, TrainError> {
    let k = subset_size(manifest.len(), fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, manifest.len(), k).into_vec();
    picked.sort_unstable();
    let records = picked.into_iter().map(|i| manifest.records[i].clone()).collect();
    Ok(manifest.derive(records, format!("{} [fine-tune subset {fraction}, seed {seed}]", manifest.source_description)))
}
