use std::collections::HashMap;

use super::QcError;
use crate::data::{batch_order, load_dataset_lenient, Dataset};
use crate::error::VolumeIoError;
use crate::manifest::Manifest;
use crate::model::Model;

const INFERENCE_BATCH: usize = 8;

/// A manifest with `predicted_prob` filled wherever the volume could be
/// read, plus the per-record failures.
#[derive(Debug)]
pub struct PredictOutcome {
    pub manifest: Manifest,
    pub failures: Vec<(String, VolumeIoError)>,
}

/// Artifact probability (softmax output 1, eval mode) for every sample, in order.
pub fn predict_dataset(model: &Model, dataset: &Dataset) -> Result<Vec<f64>, QcError> {
    let classes = model.config().num_classes;
    let mut probs = Vec::with_capacity(dataset.len());
    let order = batch_order(dataset.len(), INFERENCE_BATCH, false, 0)
        .map_err(|e| QcError::InvalidInput(e.to_string()))?;
    for ix in order {
        let batch = dataset.batch(&ix, false).map_err(|e| QcError::InvalidInput(e.to_string()))?;
        let out = model.predict(&batch.tensor)?;
        probs.extend(out.data().chunks(classes).map(|row| (row[1] as f64).clamp(0.0, 1.0)));
    }
    Ok(probs)
}

/// Runs the model over every record. Records whose volume cannot be read or
/// preprocessed keep `predicted_prob = None` and are reported in `failures`;
/// the run continues.
pub fn predict(model: &Model, manifest: &Manifest) -> Result<PredictOutcome, QcError> {
    let (dataset, failures) = load_dataset_lenient(manifest, model.config().input_dims);
    let probs = predict_dataset(model, &dataset)?;
    let by_id: HashMap<&str, f64> = dataset.samples.iter().map(|s| s.id.as_str()).zip(probs).collect();
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.predicted_prob = by_id.get(r.id.as_str()).copied();
    }
    Ok(PredictOutcome { manifest: out, failures })
}
