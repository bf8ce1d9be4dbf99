//! JSON-lines dataset catalog: one [`VolumeRecord`] per line.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::VolumeIoError;
use crate::volume::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub id: String,
    pub subject_id: String,
    pub scan_path: PathBuf,
    pub volume_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_prob: Option<f64>,
}

impl VolumeRecord {
    pub fn new(id: impl Into<String>, subject_id: impl Into<String>, scan_path: impl Into<PathBuf>, volume_index: usize) -> Self {
        Self {
            id: id.into(),
            subject_id: subject_id.into(),
            scan_path: scan_path.into(),
            volume_index,
            label: None,
            predicted_prob: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.subject_id.is_empty() {
            return Err(format!("record {:?} has an empty subject_id", self.id));
        }
        if let Some(p) = self.predicted_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("record {:?}: predicted_prob {p} outside [0, 1]", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<VolumeRecord>,
    pub source_description: String,
    /// Relative `scan_path`s resolve against this directory (the manifest's
    /// own directory when loaded from disk).
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    /// Validates id uniqueness, subject ids and probability ranges.
    pub fn new(records: Vec<VolumeRecord>, source_description: impl Into<String>) -> Result<Self, VolumeIoError> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            r.check().map_err(|message| VolumeIoError::Parse { line, message })?;
            if !seen.insert(r.id.as_str()) {
                return Err(VolumeIoError::DuplicateId { line, id: r.id.clone() });
            }
        }
        Ok(Self { records, source_description: source_description.into(), base_dir: None })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    /// A manifest over a subset of this one's records, sharing the base directory.
    pub fn derive(&self, records: Vec<VolumeRecord>, source_description: impl Into<String>) -> Self {
        Self { records, source_description: source_description.into(), base_dir: self.base_dir.clone() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&VolumeRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn resolve(&self, record: &VolumeRecord) -> PathBuf {
        match &self.base_dir {
            Some(dir) if record.scan_path.is_relative() => dir.join(&record.scan_path),
            _ => record.scan_path.clone(),
        }
    }

    pub fn labels(&self) -> Option<Vec<Label>> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn probs(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.predicted_prob).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            // VolumeRecord has only string/number fields, so this cannot fail.
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses JSON-lines text. Blank lines are skipped but still counted, so
/// reported line numbers match what an editor shows.
pub fn parse_manifest(text: &str, source_description: impl Into<String>) -> Result<Manifest, VolumeIoError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: VolumeRecord =
            serde_json::from_str(raw).map_err(|e| VolumeIoError::Parse { line, message: e.to_string() })?;
        rec.check().map_err(|message| VolumeIoError::Parse { line, message })?;
        if !seen.insert(rec.id.clone()) {
            return Err(VolumeIoError::DuplicateId { line, id: rec.id });
        }
        records.push(rec);
    }
    Ok(Manifest { records, source_description: source_description.into(), base_dir: None })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, VolumeIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(VolumeIoError::io(path))?;
    let m = parse_manifest(&text, path.display().to_string())?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m.with_base_dir(dir))
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), VolumeIoError> {
    let path = path.as_ref();
    fs::write(path, manifest.to_jsonl()).map_err(VolumeIoError::io(path))
}
