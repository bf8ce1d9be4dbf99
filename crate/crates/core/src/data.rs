//! Subject-level stratified splitting, volume loading and batch assembly.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use qcnet_tensor::Tensor;

use crate::error::VolumeIoError;
use crate::manifest::{Manifest, VolumeRecord};
use crate::nifti::read_nifti;
use crate::preprocess::preprocess;
use crate::volume::{Label, Scan4D};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("subject {0:?} has no labeled volumes")]
    UnlabeledSubject(String),

    #[error("{class} class has {count} subject(s); at least 2 are needed for a validation slice")]
    TooFewSubjects { class: Label, count: usize },

    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("record {0:?} has no label")]
    UnlabeledRecord(String),

    #[error("batch size must be at least 1")]
    InvalidBatchSize,

    #[error(transparent)]
    Volume(#[from] VolumeIoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(val_fraction: f64, seed: u64) -> Result<Self, DataError> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(DataError::InvalidFraction(val_fraction));
        }
        Ok(Self { val_fraction, seed })
    }
}

/// Artifact when any labeled volume of the subject is an artifact.
pub fn subject_class<'a>(records: impl IntoIterator<Item = &'a VolumeRecord>) -> Result<Label, DataError> {
    let mut subject = None;
    let mut class = None;
    for r in records {
        subject.get_or_insert_with(|| r.subject_id.clone());
        match r.label {
            Some(Label::Artifact) => return Ok(Label::Artifact),
            Some(Label::Normal) => class = Some(Label::Normal),
            None => {}
        }
    }
    class.ok_or_else(|| DataError::UnlabeledSubject(subject.unwrap_or_default()))
}

/// Validation subjects for a class of `n`: `round_half_up(fraction * n)`,
/// kept within `1..=n-1`.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Splits by subject, separately within the Artifact and Normal subject
/// classes, so that no subject contributes volumes to both sides. Record
/// order is preserved on each side.
pub fn stratified_subject_split(manifest: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest), DataError> {
    SplitSpec::new(spec.val_fraction, spec.seed)?;
    let mut by_subject: BTreeMap<&str, Vec<&VolumeRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r);
    }
    let mut classes: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for (subject, recs) in &by_subject {
        classes.entry(subject_class(recs.iter().copied())?).or_default().push(subject);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut val_subjects = std::collections::HashSet::new();
    for class in [Label::Artifact, Label::Normal] {
        let mut subjects = classes.remove(&class).unwrap_or_default();
        if subjects.len() < 2 {
            return Err(DataError::TooFewSubjects { class, count: subjects.len() });
        }
        subjects.shuffle(&mut rng);
        let k = validation_count(subjects.len(), spec.val_fraction);
        val_subjects.extend(subjects.into_iter().take(k));
    }

    let (val, train): (Vec<_>, Vec<_>) =
        manifest.records.iter().cloned().partition(|r| val_subjects.contains(r.subject_id.as_str()));
    let desc = &manifest.source_description;
    Ok((manifest.derive(train, format!("{desc} [train split]")), manifest.derive(val, format!("{desc} [validation split]"))))
}

/// One preprocessed volume, voxels laid out `[tz, ty, tx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject_id: String,
    pub label: Option<Label>,
    pub voxels: Vec<f32>,
}

/// Preprocessed volumes at a fixed `(tx, ty, tz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: [usize; 3],
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, 1, tz, ty, tx]`
    pub tensor: Tensor<f32>,
    pub ids: Vec<String>,
    /// Class indices: 0 = Normal, 1 = Artifact.
    pub targets: Vec<usize>,
}

fn read_scans(manifest: &Manifest) -> HashMap<PathBuf, Result<Arc<Scan4D>, Arc<VolumeIoError>>> {
    let mut paths: Vec<PathBuf> = manifest.records.iter().map(|r| manifest.resolve(r)).collect();
    paths.sort();
    paths.dedup();
    paths
        .into_par_iter()
        .map(|p| {
            let scan = read_nifti(&p).map(Arc::new).map_err(Arc::new);
            (p, scan)
        })
        .collect()
}

fn prepare(
    manifest: &Manifest,
    r: &VolumeRecord,
    scans: &HashMap<PathBuf, Result<Arc<Scan4D>, Arc<VolumeIoError>>>,
    dims: [usize; 3],
) -> Result<Sample, VolumeIoError> {
    let path = manifest.resolve(r);
    let scan = match &scans[&path] {
        Ok(s) => s,
        Err(e) => return Err(clone_error(e)),
    };
    let vol = scan.volumes.get(r.volume_index).ok_or_else(|| VolumeIoError::VolumeIndexOutOfRange {
        id: r.id.clone(),
        index: r.volume_index,
        count: scan.volumes.len(),
        path: path.clone(),
    })?;
    let pre = preprocess(vol, dims)?;
    Ok(Sample { id: r.id.clone(), subject_id: r.subject_id.clone(), label: r.label, voxels: pre.into_voxels() })
}

// io::Error is not Clone; a scan shared by many records reports its failure
// once per record.
fn clone_error(e: &VolumeIoError) -> VolumeIoError {
    match e {
        VolumeIoError::Io { path, source } => {
            VolumeIoError::Io { path: path.clone(), source: std::io::Error::new(source.kind(), source.to_string()) }
        }
        VolumeIoError::BadMagic(s) => VolumeIoError::BadMagic(s.clone()),
        VolumeIoError::UnsupportedDtype(d) => VolumeIoError::UnsupportedDtype(*d),
        VolumeIoError::TruncatedFile { expected, actual } => {
            VolumeIoError::TruncatedFile { expected: *expected, actual: *actual }
        }
        other => VolumeIoError::InvalidHeader(other.to_string()),
    }
}

/// Reads and preprocesses every record; the first failure aborts.
pub fn load_dataset(manifest: &Manifest, dims: [usize; 3]) -> Result<Dataset, DataError> {
    let (ds, failures) = load_dataset_lenient(manifest, dims);
    match failures.into_iter().next() {
        Some((_, e)) => Err(e.into()),
        None => Ok(ds),
    }
}

/// Reads and preprocesses every record, returning the failures (record id
/// and error) alongside the volumes that did load. Order is preserved.
pub fn load_dataset_lenient(manifest: &Manifest, dims: [usize; 3]) -> (Dataset, Vec<(String, VolumeIoError)>) {
    let scans = read_scans(manifest);
    let results: Vec<Result<Sample, VolumeIoError>> =
        manifest.records.par_iter().map(|r| prepare(manifest, r, &scans, dims)).collect();
    let mut samples = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in manifest.records.iter().zip(results) {
        match res {
            Ok(s) => samples.push(s),
            Err(e) => failures.push((r.id.clone(), e)),
        }
    }
    (Dataset { dims, samples }, failures)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn voxels_per_sample(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn labels(&self) -> Option<Vec<Label>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the given samples into a batch. Unlabeled samples get no
    /// target, so a batch with any of them has `targets` shorter than `ids`
    /// only when `require_labels` is false.
    pub fn batch(&self, indices: &[usize], require_labels: bool) -> Result<Batch, DataError> {
        let [tx, ty, tz] = self.dims;
        let mut data = Vec::with_capacity(indices.len() * self.voxels_per_sample());
        let mut ids = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend_from_slice(&s.voxels);
            ids.push(s.id.clone());
            match s.label {
                Some(l) => targets.push(l.class_index()),
                None if require_labels => return Err(DataError::UnlabeledRecord(s.id.clone())),
                None => {}
            }
        }
        let tensor = Tensor::new(&[indices.len(), 1, tz, ty, tx], data).map_err(|e| {
            DataError::Volume(VolumeIoError::InvalidHeader(format!("cannot stack batch: {e}")))
        })?;
        Ok(Batch { tensor, ids, targets })
    }
}

/// Index groups of at most `batch_size`, covering `0..n` exactly once. The
/// final group may be short.
pub fn batch_order(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::InvalidBatchSize);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Labeled batches over the whole dataset.
pub fn make_batches(dataset: &Dataset, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Batch>, DataError> {
    batch_order(dataset.len(), batch_size, shuffle, seed)?.iter().map(|ix| dataset.batch(ix, true)).collect()
}
