use std::fs;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{inject_artifact, sample_artifact, ArtifactKind, ArtifactSpec};
use super::{add_rician_noise, gaussian_smooth, phantom_anatomy, PhantomConfig, PhantomError};
use crate::error::VolumeIoError;
use crate::manifest::{save_manifest, Manifest, VolumeRecord};
use crate::nifti::write_nifti;
use crate::volume::{Label, Scan4D, Volume3D};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ARTIFACTS_FILE: &str = "artifacts.jsonl";
pub const CONFIG_FILE: &str = "generator.json";

/// Relative weights of the artifact kinds among artifact volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindMix {
    pub dropout: f64,
    pub ghosting: f64,
    pub interslice_instability: f64,
    pub herringbone: f64,
    pub chemical_shift: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self { dropout: 1.0, ghosting: 1.0, interslice_instability: 1.0, herringbone: 1.0, chemical_shift: 1.0 }
    }
}

impl KindMix {
    pub fn only(kind: ArtifactKind) -> Self {
        let mut m = Self { dropout: 0.0, ghosting: 0.0, interslice_instability: 0.0, herringbone: 0.0, chemical_shift: 0.0 };
        *m.weight_mut(kind) = 1.0;
        m
    }

    fn weight_mut(&mut self, kind: ArtifactKind) -> &mut f64 {
        match kind {
            ArtifactKind::Dropout => &mut self.dropout,
            ArtifactKind::Ghosting => &mut self.ghosting,
            ArtifactKind::IntersliceInstability => &mut self.interslice_instability,
            ArtifactKind::Herringbone => &mut self.herringbone,
            ArtifactKind::ChemicalShift => &mut self.chemical_shift,
        }
    }

    fn weights(&self) -> [f64; 5] {
        [self.dropout, self.ghosting, self.interslice_instability, self.herringbone, self.chemical_shift]
    }
}

/// Everything that determines a synthetic dataset. Written next to the data
/// as `generator.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_subjects: usize,
    pub volumes_per_subject: usize,
    /// Probability that any one volume receives an artifact.
    pub artifact_rate: f64,
    pub kind_mix: KindMix,
    pub seed: u64,
    /// Subject ids are `{subject_prefix}-NNN`.
    pub subject_prefix: String,
    /// Grid, texture, noise and intensity of the anatomy. Its `seed` is unused;
    /// every subject and volume draws from `seed` above.
    pub phantom: PhantomConfig,
    /// Scales every artifact's effect size, in (0, 1].
    pub severity: f64,
    /// Diffusion weighting of all volumes but the first (which is b = 0).
    pub b_value: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            volumes_per_subject: 10,
            artifact_rate: 0.3,
            kind_mix: KindMix::default(),
            seed: 0,
            subject_prefix: "sub".into(),
            phantom: PhantomConfig::default(),
            severity: 1.0,
            b_value: 1000.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidConfig(m));
        self.phantom.validate()?;
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return bad(format!("artifact_rate = {} outside [0, 1]", self.artifact_rate));
        }
        if !(self.severity > 0.0 && self.severity <= 1.0) {
            return bad(format!("severity = {} outside (0, 1]", self.severity));
        }
        if self.n_subjects == 0 || self.volumes_per_subject == 0 {
            return bad("need at least one subject and one volume per subject".into());
        }
        let w = self.kind_mix.weights();
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (self.artifact_rate > 0.0 && w.iter().sum::<f64>() <= 0.0) {
            return bad(format!("kind_mix weights {w:?} must be non-negative with a positive sum"));
        }
        if self.subject_prefix.is_empty() || self.subject_prefix.contains(['/', '\\']) {
            return bad(format!("subject_prefix {:?} must be a plain, non-empty name", self.subject_prefix));
        }
        Ok(())
    }
}

/// Relative std of the smooth per-volume contrast variation.
const CONTRAST_JITTER: f32 = 0.1;

// Stream ids: volumes count up from 0, subjects live in the upper half.
const SUBJECT_STREAM: u64 = 1 << 63;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct SubjectOutput {
    scan: Scan4D,
    records: Vec<VolumeRecord>,
    truth: Vec<Option<ArtifactSpec>>,
}

fn generate_subject(cfg: &GeneratorConfig, s: usize) -> Result<SubjectOutput, PhantomError> {
    let subject = format!("{}-{s:03}", cfg.subject_prefix);
    let mut srng = rng_for(cfg.seed, SUBJECT_STREAM | s as u64);
    let mut anatomy_cfg = cfg.phantom.clone();
    for (a, &d) in anatomy_cfg.semi_axes.iter_mut().zip(&cfg.phantom.dims) {
        *a = (*a * srng.random_range(0.9..=1.05)).min(d as f64 / 2.0);
    }
    let anatomy = phantom_anatomy(&anatomy_cfg, &mut srng)?;
    let dims = cfg.phantom.dims;
    let kinds = WeightedIndex::new(cfg.kind_mix.weights()).ok();

    let mut volumes = Vec::with_capacity(cfg.volumes_per_subject);
    let mut records = Vec::with_capacity(cfg.volumes_per_subject);
    let mut truth = Vec::with_capacity(cfg.volumes_per_subject);
    for v in 0..cfg.volumes_per_subject {
        let mut rng = rng_for(cfg.seed, (s * cfg.volumes_per_subject + v) as u64);
        let spec_kind = match &kinds {
            Some(k) if rng.random_bool(cfg.artifact_rate) => Some(ArtifactKind::ALL[k.sample(&mut rng)]),
            _ => None,
        };
        // b = 0 reference first, then attenuated diffusion-weighted volumes
        // with a mild per-direction contrast change.
        let atten: f32 = if v == 0 { 1.0 } else { rng.random_range(0.45..=0.65) };
        let white: Vec<f32> = (0..anatomy.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let field = gaussian_smooth(&white, dims, 3.0);
        let sd = (field.iter().map(|f| f * f).sum::<f32>() / field.len() as f32).sqrt().max(f32::MIN_POSITIVE);
        let signal: Vec<f32> =
            anatomy.iter().zip(&field).map(|(&a, &f)| a * atten * (1.0 + CONTRAST_JITTER * f / sd)).collect();
        let mut vol = Volume3D::new(dims, [1.0; 3], signal.iter().map(|x| x.max(0.0)).collect())?;

        let spec = spec_kind.map(|k| {
            sample_artifact(k, dims, cfg.severity, cfg.phantom.intensity_scale * atten as f64, &mut rng)
        });
        if let Some(spec) = &spec {
            vol = inject_artifact(&vol, spec)?;
        }
        let mut vox = vol.into_voxels();
        add_rician_noise(&mut vox, cfg.phantom.noise_level * cfg.phantom.intensity_scale, &mut rng);
        volumes.push(Volume3D::new(dims, [1.0; 3], vox)?);

        let mut rec = VolumeRecord::new(format!("{subject}_vol-{v:02}"), subject.clone(), format!("{subject}.nii"), v);
        rec.label = Some(if spec.is_some() { Label::Artifact } else { Label::Normal });
        records.push(rec);
        truth.push(spec);
    }
    let b_values = (0..cfg.volumes_per_subject).map(|v| if v == 0 { 0.0 } else { cfg.b_value }).collect();
    let scan = Scan4D::new(volumes, subject)?.with_b_values(b_values)?;
    Ok(SubjectOutput { scan, records, truth })
}

#[derive(Serialize)]
struct TruthLine<'a> {
    id: &'a str,
    artifact: &'a Option<ArtifactSpec>,
}

/// Writes one NIfTI scan (plus `.bval`) per subject, `manifest.jsonl` with
/// ground-truth labels, `artifacts.jsonl` with the injected parameters and
/// `generator.json` into `out_dir`. Each volume draws from its own stream
/// of `seed`, so the output does not depend on scheduling.
pub fn generate_dataset(cfg: &GeneratorConfig, out_dir: impl AsRef<Path>) -> Result<Manifest, PhantomError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(VolumeIoError::io(out_dir))?;

    let subjects: Vec<SubjectOutput> =
        (0..cfg.n_subjects).into_par_iter().map(|s| generate_subject(cfg, s)).collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut truth = String::new();
    for sub in &subjects {
        write_nifti(&sub.scan, out_dir.join(&sub.records[0].scan_path))?;
        for (r, t) in sub.records.iter().zip(&sub.truth) {
            truth.push_str(&serde_json::to_string(&TruthLine { id: &r.id, artifact: t }).expect("serializes"));
            truth.push('\n');
        }
        records.extend(sub.records.iter().cloned());
    }
    let description = format!("synthetic phantoms, seed {}", cfg.seed);
    let manifest = Manifest::new(records, description)?.with_base_dir(out_dir);
    save_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(VolumeIoError::io(p))
    };
    write(ARTIFACTS_FILE, truth)?;
    write(CONFIG_FILE, serde_json::to_string_pretty(cfg).expect("serializes") + "\n")?;
    Ok(manifest)
}
