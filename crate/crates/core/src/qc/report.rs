use serde::{Deserialize, Serialize};

use super::{apply_threshold, compute_metrics, Metrics, QcError, ThresholdPolicy};
use crate::manifest::Manifest;
use crate::volume::Label;

/// Fraction of per-slice review avoided by labeling whole volumes:
/// `1 - n / (n * s) = 1 - 1 / s`.
pub fn annotation_savings(n_volumes: usize, slices_per_volume: usize) -> Result<f64, QcError> {
    if n_volumes == 0 || slices_per_volume == 0 {
        return Err(QcError::InvalidInput(format!(
            "annotation savings needs at least one volume and one slice (got {n_volumes}, {slices_per_volume})"
        )));
    }
    let slices = n_volumes
        .checked_mul(slices_per_volume)
        .ok_or_else(|| QcError::InvalidInput("slice count overflows".into()))?;
    // Integer numerator and denominator; one rounding in the final division.
    Ok((slices - n_volumes) as f64 / slices as f64)
}

/// Whole-percent text, truncated so a figure is never overstated
/// (0.9875 -> "98%").
pub fn format_percent(fraction: f64) -> String {
    format!("{}%", (fraction * 100.0 + 1e-9).floor() as i64)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Where a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub checkpoint: Option<String>,
    /// Axial slices per volume, used for the annotation-savings note.
    pub slices_per_volume: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub id: String,
    pub subject_id: String,
    pub p_artifact: f64,
    pub decision: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

/// Confusion counts with ratios rounded to 3 decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub evaluated: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

impl From<Metrics> for ReportMetrics {
    fn from(m: Metrics) -> Self {
        Self {
            evaluated: m.total(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
            precision: m.precision.map(round3),
            recall: m.recall.map(round3),
            accuracy: m.accuracy.map(round3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsNote {
    pub volumes: usize,
    pub slices_per_volume: usize,
    pub slices: usize,
    pub savings: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub tool_version: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub threshold: f64,
    pub total_volumes: usize,
    pub flagged_count: usize,
    /// Descending `p_artifact`, ties by id, so flagged volumes come first.
    pub volumes: Vec<ReportEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ReportMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_savings: Option<SavingsNote>,
}

/// Builds the report. Metrics are computed over the labeled records, and
/// only when at least one record carries a label.
pub fn generate_report(manifest: &Manifest, policy: &ThresholdPolicy, provenance: &Provenance) -> Result<QcReport, QcError> {
    let mut volumes = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let p = r.predicted_prob.ok_or_else(|| QcError::MissingPredictions(r.id.clone()))?;
        volumes.push(ReportEntry {
            id: r.id.clone(),
            subject_id: r.subject_id.clone(),
            p_artifact: p,
            decision: apply_threshold(p, policy),
            label: r.label,
        });
    }
    volumes.sort_by(|a, b| b.p_artifact.total_cmp(&a.p_artifact).then_with(|| a.id.cmp(&b.id)));

    let labeled: Vec<&ReportEntry> = volumes.iter().filter(|v| v.label.is_some()).collect();
    let metrics = if labeled.is_empty() {
        None
    } else {
        let decisions: Vec<Label> = labeled.iter().map(|v| v.decision).collect();
        let labels: Vec<Label> = labeled.iter().filter_map(|v| v.label).collect();
        Some(compute_metrics(&decisions, &labels)?.into())
    };

    let annotation_savings = match annotation_savings(volumes.len(), provenance.slices_per_volume) {
        Ok(savings) => {
            let slices = volumes.len() * provenance.slices_per_volume;
            Some(SavingsNote {
                volumes: volumes.len(),
                slices_per_volume: provenance.slices_per_volume,
                slices,
                savings,
                text: format!(
                    "Rating {} volumes instead of {} slices reduces manual annotation by {}.",
                    volumes.len(),
                    slices,
                    format_percent(savings)
                ),
            })
        }
        Err(_) => None,
    };

    Ok(QcReport {
        tool_version: provenance.tool_version.clone(),
        seed: provenance.seed,
        checkpoint: provenance.checkpoint.clone(),
        threshold: policy.threshold(),
        total_volumes: volumes.len(),
        flagged_count: volumes.iter().filter(|v| v.decision.is_artifact()).count(),
        volumes,
        metrics,
        annotation_savings,
    })
}

impl QcReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn policy(&self) -> Result<ThresholdPolicy, QcError> {
        ThresholdPolicy::new(self.threshold)
    }

    /// Every listed decision equals the policy applied to its probability.
    pub fn is_consistent(&self) -> bool {
        let Ok(policy) = self.policy() else { return false };
        self.volumes.iter().all(|v| apply_threshold(v.p_artifact, &policy) == v.decision)
            && self.flagged_count == self.volumes.iter().filter(|v| v.decision.is_artifact()).count()
            && self.total_volumes == self.volumes.len()
    }

    /// Human-readable summary.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let seed = self.seed.map(|x| format!(", seed {x}")).unwrap_or_default();
        s.push_str(&format!("qcnet {} QC report{seed}\n", self.tool_version));
        if let Some(c) = &self.checkpoint {
            s.push_str(&format!("Checkpoint: {c}\n"));
        }
        s.push_str(&format!("Threshold: {} (artifact when p >= threshold)\n", self.threshold));
        s.push_str(&format!("Volumes: {}, flagged as artifact: {}\n", self.total_volumes, self.flagged_count));

        let flagged: Vec<&ReportEntry> = self.volumes.iter().filter(|v| v.decision.is_artifact()).collect();
        if flagged.is_empty() {
            s.push_str("\nNo volumes were flagged.\n");
        } else {
            s.push_str("\nFlagged volumes (most likely artifact first):\n");
            let width = flagged.iter().map(|v| v.id.len()).max().unwrap_or(0);
            for v in flagged {
                s.push_str(&format!("  {:<width$}  subject {}  p={:.3}\n", v.id, v.subject_id, v.p_artifact));
            }
        }

        if let Some(m) = &self.metrics {
            let pct = |x: Option<f64>| x.map(format_percent).unwrap_or_else(|| "n/a".into());
            s.push_str(&format!(
                "\nMetrics over {} labeled volumes: precision {}, recall {}, accuracy {}\n",
                m.evaluated,
                pct(m.precision),
                pct(m.recall),
                pct(m.accuracy)
            ));
            s.push_str(&format!("  TP {}  FP {}  FN {}  TN {}\n", m.tp, m.fp, m.fn_, m.tn));
        }
        if let Some(n) = &self.annotation_savings {
            s.push_str(&format!("\n{}\n", n.text));
        }
        s
    }
}
