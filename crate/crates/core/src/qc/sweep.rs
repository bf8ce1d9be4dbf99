use serde::{Deserialize, Serialize};

use super::{metrics_at, QcError, ThresholdPolicy};
use crate::volume::Label;

pub const CSV_HEADER: &str = "threshold,precision,recall,accuracy,flagged";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub flagged: usize,
}

/// Metrics at increasing thresholds; `flagged` never increases along it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<CurvePoint>,
}

/// Evaluates every distinct probability plus 0 and 1.
pub fn threshold_sweep(probs: &[f64], labels: &[Label]) -> Result<PrCurve, QcError> {
    if probs.len() != labels.len() {
        return Err(QcError::LengthMismatch { decisions: probs.len(), labels: labels.len() });
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(QcError::InvalidProbability(p));
    }
    let mut thresholds: Vec<f64> = probs.iter().copied().chain([0.0, 1.0]).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let m = metrics_at(probs, labels, &ThresholdPolicy::new(t)?)?;
        points.push(CurvePoint {
            threshold: t,
            precision: m.precision,
            recall: m.recall,
            accuracy: m.accuracy,
            flagged: m.flagged(),
        });
    }
    Ok(PrCurve { points })
}

impl PrCurve {
    /// CSV with [`CSV_HEADER`]; undefined ratios are empty cells.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.threshold,
                cell(p.precision),
                cell(p.recall),
                cell(p.accuracy),
                p.flagged
            ));
        }
        out
    }
}
