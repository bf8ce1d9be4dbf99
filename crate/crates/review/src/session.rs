use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use qcnet_core::manifest::{Manifest, VolumeRecord};
use qcnet_core::qc::{apply_threshold, metrics_at, threshold_sweep, Metrics, PrCurve, QcError, ThresholdPolicy};
use qcnet_core::trainer::select_finetune_subset;
use qcnet_core::{save_manifest, Label};
use serde::{Deserialize, Serialize};

use crate::ReviewError;

pub const JOURNAL_FILE: &str = "session.journal";

/// One line of the override journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum JournalEvent {
    Set { id: String, label: Label },
    Clear { id: String },
}

impl JournalEvent {
    pub fn id(&self) -> &str {
        match self {
            JournalEvent::Set { id, .. } | JournalEvent::Clear { id } => id,
        }
    }
}

/// Parses journal text. Blank lines are skipped; line numbers are 1-based.
/// A torn final line (no trailing newline, invalid JSON) is an error like any
/// other: the server only acknowledges after the newline hits the disk.
pub fn parse_journal(text: &str) -> Result<Vec<JournalEvent>, ReviewError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(line).map_err(|e| ReviewError::Journal { line: i + 1, message: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

/// Folds events into the override map.
pub fn replay(events: &[JournalEvent]) -> BTreeMap<String, Label> {
    let mut map = BTreeMap::new();
    for e in events {
        match e {
            JournalEvent::Set { id, label } => {
                map.insert(id.clone(), *label);
            }
            JournalEvent::Clear { id } => {
                map.remove(id);
            }
        }
    }
    map
}

/// A volume as the reviewer sees it at some threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub id: String,
    pub subject_id: String,
    pub p_artifact: f64,
    pub decision: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(rename = "override", skip_serializing_if = "Option::is_none")]
    pub override_label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_label: Option<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    ProbDesc,
    ProbAsc,
    Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub threshold: f64,
    pub flagged: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default = "yes")]
    pub include_overrides: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for ExportRequest {
    fn default() -> Self {
        Self { fraction: None, include_overrides: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportOutcome {
    pub path: PathBuf,
    pub records: usize,
}

/// Predictions plus reviewer overrides, persisted through an append-only
/// journal.
#[derive(Debug)]
pub struct ReviewSession {
    manifest: Manifest,
    overrides: BTreeMap<String, Label>,
    journal_path: PathBuf,
    journal: File,
    export_dir: PathBuf,
}

impl ReviewSession {
    /// Opens a session whose state lives in `state_dir` (journal and
    /// exports). An existing journal is replayed.
    pub fn open(manifest: Manifest, state_dir: impl AsRef<Path>) -> Result<Self, ReviewError> {
        if let Some(r) = manifest.records.iter().find(|r| r.predicted_prob.is_none()) {
            return Err(QcError::MissingPredictions(r.id.clone()).into());
        }
        if let Some(p) = manifest.records.iter().filter_map(|r| r.predicted_prob).find(|p| !(0.0..=1.0).contains(p)) {
            return Err(QcError::InvalidProbability(p).into());
        }
        let dir = state_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(ReviewError::io(dir))?;
        // Absolute, so exported paths mean the same thing to every client.
        let dir = dir.canonicalize().map_err(ReviewError::io(dir))?;
        let journal_path = dir.join(JOURNAL_FILE);
        let events = match std::fs::read_to_string(&journal_path) {
            Ok(text) => parse_journal(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ReviewError::Io { path: journal_path, source: e }),
        };
        if let Some(e) = events.iter().find(|e| manifest.get(e.id()).is_none()) {
            return Err(ReviewError::UnknownId(e.id().to_string()));
        }
        let overrides = replay(&events);
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path).map_err(ReviewError::io(&journal_path))?;
        Ok(Self { manifest, overrides, journal_path, journal, export_dir: dir })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn overrides(&self) -> &BTreeMap<String, Label> {
        &self.overrides
    }

    pub fn journal_path(&self) -> &Path {
        &self.journal_path
    }

    pub fn record(&self, id: &str) -> Option<&VolumeRecord> {
        self.manifest.get(id)
    }

    /// Override if present, else the manifest label.
    pub fn effective_label(&self, r: &VolumeRecord) -> Option<Label> {
        self.overrides.get(&r.id).copied().or(r.label)
    }

    pub fn row(&self, r: &VolumeRecord, policy: &ThresholdPolicy) -> VolumeRow {
        let p = r.predicted_prob.expect("checked on open");
        VolumeRow {
            id: r.id.clone(),
            subject_id: r.subject_id.clone(),
            p_artifact: p,
            decision: apply_threshold(p, policy),
            label: r.label,
            override_label: self.overrides.get(&r.id).copied(),
            effective_label: self.effective_label(r),
        }
    }

    pub fn rows(&self, policy: &ThresholdPolicy, sort: SortOrder) -> Vec<VolumeRow> {
        let mut rows: Vec<VolumeRow> = self.manifest.records.iter().map(|r| self.row(r, policy)).collect();
        match sort {
            SortOrder::ProbDesc => rows.sort_by(|a, b| b.p_artifact.total_cmp(&a.p_artifact).then_with(|| a.id.cmp(&b.id))),
            SortOrder::ProbAsc => rows.sort_by(|a, b| a.p_artifact.total_cmp(&b.p_artifact).then_with(|| a.id.cmp(&b.id))),
            SortOrder::Id => rows.sort_by(|a, b| a.id.cmp(&b.id)),
        }
        rows
    }

    pub fn flagged(&self, policy: &ThresholdPolicy) -> usize {
        self.manifest
            .records
            .iter()
            .filter(|r| apply_threshold(r.predicted_prob.expect("checked on open"), policy).is_artifact())
            .count()
    }

    /// Probabilities and effective labels of the volumes that have one.
    pub fn labeled(&self) -> (Vec<f64>, Vec<Label>) {
        self.manifest
            .records
            .iter()
            .filter_map(|r| Some((r.predicted_prob?, self.effective_label(r)?)))
            .unzip()
    }

    pub fn metrics(&self, policy: &ThresholdPolicy) -> Result<SessionMetrics, ReviewError> {
        let (probs, labels) = self.labeled();
        if labels.is_empty() {
            return Err(ReviewError::NoLabels);
        }
        Ok(SessionMetrics { threshold: policy.threshold(), flagged: self.flagged(policy), metrics: metrics_at(&probs, &labels, policy)? })
    }

    pub fn sweep(&self) -> Result<PrCurve, ReviewError> {
        let (probs, labels) = self.labeled();
        if labels.is_empty() {
            return Err(ReviewError::NoLabels);
        }
        Ok(threshold_sweep(&probs, &labels)?)
    }

    fn append(&mut self, event: &JournalEvent) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let path = self.journal_path.clone();
        self.journal.write_all(line.as_bytes()).map_err(ReviewError::io(&path))?;
        self.journal.sync_data().map_err(ReviewError::io(&path))
    }

    /// Journals and applies an override. The event is on disk before this
    /// returns.
    pub fn set_override(&mut self, id: &str, label: Label) -> Result<(), ReviewError> {
        if self.manifest.get(id).is_none() {
            return Err(ReviewError::UnknownId(id.to_string()));
        }
        self.append(&JournalEvent::Set { id: id.to_string(), label })?;
        self.overrides.insert(id.to_string(), label);
        Ok(())
    }

    /// Removes an override; a no-op (nothing journaled) when there is none.
    pub fn clear_override(&mut self, id: &str) -> Result<(), ReviewError> {
        if self.manifest.get(id).is_none() {
            return Err(ReviewError::UnknownId(id.to_string()));
        }
        if self.overrides.contains_key(id) {
            self.append(&JournalEvent::Clear { id: id.to_string() })?;
            self.overrides.remove(id);
        }
        Ok(())
    }

    /// Builds the fine-tune manifest: a seeded fraction of all volumes when
    /// `fraction` is given, otherwise exactly the overridden volumes. Scan
    /// paths are made absolute so the file loads from anywhere.
    pub fn export_manifest(&self, req: &ExportRequest) -> Result<Manifest, ReviewError> {
        let label_of = |r: &VolumeRecord| if req.include_overrides { self.effective_label(r) } else { r.label };
        let records: Vec<VolumeRecord> = self
            .manifest
            .records
            .iter()
            .map(|r| {
                let mut out = VolumeRecord::new(r.id.clone(), r.subject_id.clone(), absolute(&self.manifest.resolve(r)), r.volume_index);
                out.label = label_of(r);
                out
            })
            .collect();
        let all = self.manifest.derive(records, format!("{} [review export]", self.manifest.source_description));
        let selected = match req.fraction {
            Some(f) => select_finetune_subset(&all, f, req.seed)?,
            None => {
                let picked: Vec<VolumeRecord> = all.records.iter().filter(|r| self.overrides.contains_key(&r.id)).cloned().collect();
                all.derive(picked, format!("{} [overridden volumes]", self.manifest.source_description))
            }
        };
        if selected.is_empty() {
            return Err(ReviewError::NothingToExport);
        }
        Ok(selected)
    }

    /// Writes [`Self::export_manifest`] to a fresh file in the state directory.
    pub fn export(&self, req: &ExportRequest) -> Result<ExportOutcome, ReviewError> {
        let manifest = self.export_manifest(req)?;
        let path = (1..)
            .map(|k| self.export_dir.join(format!("finetune-set-{k:03}.jsonl")))
            .find(|p| !p.exists())
            .expect("unbounded range");
        save_manifest(&manifest, &path)?;
        Ok(ExportOutcome { path, records: manifest.len() })
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
