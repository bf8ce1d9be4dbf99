//! Threshold decisions, metrics, sweeps, reports and batched inference.

mod predict;
mod report;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Label;

pub use predict::{predict, predict_dataset, PredictOutcome};
pub use report::{annotation_savings, format_percent, generate_report, Provenance, QcReport, ReportEntry, ReportMetrics, SavingsNote};
pub use sweep::{threshold_sweep, CurvePoint, PrCurve, CSV_HEADER};

#[derive(Debug, Error)]
pub enum QcError {
    #[error("length mismatch: {decisions} decisions vs {labels} labels")]
    LengthMismatch { decisions: usize, labels: usize },

    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("record {0:?} has no predicted probability")]
    MissingPredictions(String),

    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Inclusive cut on the artifact probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    threshold: f64,
}

impl ThresholdPolicy {
    pub const DEFAULT_THRESHOLD: f64 = 0.5;

    pub fn new(threshold: f64) -> Result<Self, QcError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(QcError::InvalidThreshold(threshold));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self { threshold: Self::DEFAULT_THRESHOLD }
    }
}

/// Artifact iff `p >= t`.
pub fn apply_threshold(p: f64, policy: &ThresholdPolicy) -> Label {
    if p >= policy.threshold {
        Label::Artifact
    } else {
        Label::Normal
    }
}

/// Confusion counts with Artifact as the positive class. Ratios whose
/// denominator is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn flagged(&self) -> usize {
        self.tp + self.fp
    }
}

pub fn compute_metrics(decisions: &[Label], labels: &[Label]) -> Result<Metrics, QcError> {
    if decisions.len() != labels.len() {
        return Err(QcError::LengthMismatch { decisions: decisions.len(), labels: labels.len() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (d, l) in decisions.iter().zip(labels) {
        match (d, l) {
            (Label::Artifact, Label::Artifact) => tp += 1,
            (Label::Artifact, Label::Normal) => fp += 1,
            (Label::Normal, Label::Artifact) => fn_ += 1,
            (Label::Normal, Label::Normal) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

/// Thresholds `probs` and scores the decisions against `labels`.
pub fn metrics_at(probs: &[f64], labels: &[Label], policy: &ThresholdPolicy) -> Result<Metrics, QcError> {
    let decisions: Vec<Label> = probs.iter().map(|&p| apply_threshold(p, policy)).collect();
    compute_metrics(&decisions, labels)
}
