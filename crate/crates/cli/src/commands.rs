use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use qcnet_core::data::{stratified_subject_split, SplitSpec};
use qcnet_core::manifest::{load_manifest, save_manifest, Manifest, VolumeRecord};
use qcnet_core::model::{build_model, load_checkpoint, save_checkpoint, ModelConfig};
use qcnet_core::phantom::{generate_dataset, ArtifactKind, GeneratorConfig, KindMix, PhantomConfig};
use qcnet_core::qc::{apply_threshold, generate_report, metrics_at, predict, threshold_sweep, Provenance, QcReport, ThresholdPolicy};
use qcnet_core::trainer::{finetune, select_finetune_subset, train, TrainConfig};
use qcnet_core::{read_nifti, Label};
use qcnet_review::{AppState, ReviewSession, ServerOptions, SessionMetrics};

use crate::{usage, Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn policy(t: f64) -> Result<ThresholdPolicy> {
    ThresholdPolicy::new(t).map_err(|e| usage(e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth {
            out,
            subjects,
            volumes_per_subject,
            artifact_rate,
            severity,
            prefix,
            dims,
            kinds,
            texture_sigma,
            noise_level,
            intensity_scale,
        } => {
            let mut phantom = PhantomConfig::default();
            if let Some(d) = dims {
                // keep the ellipsoid's proportions on a resized grid
                for i in 0..3 {
                    phantom.semi_axes[i] *= d[i] as f64 / phantom.dims[i] as f64;
                }
                phantom.dims = d;
            }
            phantom.texture_sigma = texture_sigma.unwrap_or(phantom.texture_sigma);
            phantom.noise_level = noise_level.unwrap_or(phantom.noise_level);
            phantom.intensity_scale = intensity_scale.unwrap_or(phantom.intensity_scale);
            let kind_mix = match kinds {
                None => KindMix::default(),
                Some(names) => {
                    let mut mix = KindMix { dropout: 0.0, ghosting: 0.0, interslice_instability: 0.0, herringbone: 0.0, chemical_shift: 0.0 };
                    for n in names {
                        let kind: ArtifactKind = serde_json::from_value(serde_json::Value::String(n.clone()))
                            .map_err(|_| usage(format!("unknown artifact kind {n:?}")))?;
                        let only = KindMix::only(kind);
                        mix.dropout += only.dropout;
                        mix.ghosting += only.ghosting;
                        mix.interslice_instability += only.interslice_instability;
                        mix.herringbone += only.herringbone;
                        mix.chemical_shift += only.chemical_shift;
                    }
                    mix
                }
            };
            let cfg = GeneratorConfig {
                n_subjects: subjects,
                volumes_per_subject,
                artifact_rate,
                kind_mix,
                seed,
                subject_prefix: prefix,
                phantom,
                severity,
                ..Default::default()
            };
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let m = generate_dataset(&cfg, &out)?;
            let artifacts = m.records.iter().filter(|r| r.label == Some(Label::Artifact)).count();
            eprintln!("wrote {} volumes ({artifacts} with artifacts) to {}", m.len(), out.display());
        }

        Command::Train {
            manifest,
            val_manifest,
            val_fraction,
            preset,
            model_config,
            epochs,
            batch_size,
            lr,
            out,
            history,
            checkpoint_every,
            checkpoint_dir,
        } => {
            let model_cfg = match model_config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    let mut c = serde_json::from_str::<ModelConfig>(&text).with_context(|| format!("parsing {}", p.display()))?;
                    if let Some(s) = cli.seed {
                        c.seed = s;
                    }
                    c
                }
                None => ModelConfig::preset(&preset, seed).ok_or_else(|| usage(format!("unknown preset {preset:?} (desk-32, paper-96)")))?,
            };
            let config = TrainConfig { epochs, batch_size, lr, seed, checkpoint_every, checkpoint_dir, ..Default::default() };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let all = load_manifest(&manifest)?;
            let (tr, val) = match val_manifest {
                Some(v) => (all, load_manifest(&v)?),
                None => stratified_subject_split(&all, &SplitSpec::new(val_fraction, seed).map_err(|e| usage(e.to_string()))?)?,
            };
            eprintln!("training on {} volumes, validating on {}", tr.len(), val.len());
            let (model, hist) = train(build_model(&model_cfg)?, &tr, &val, &config)?;
            for (i, (loss, m)) in hist.train_loss.iter().zip(&hist.val_metrics).enumerate() {
                let r = m.and_then(|m| m.recall).map(|r| format!(", val recall {r:.3}")).unwrap_or_default();
                eprintln!("epoch {:>3}: loss {loss:.4}{r}", i + 1);
            }
            save_checkpoint(&model, ThresholdPolicy::DEFAULT_THRESHOLD as f32, &out)?;
            if let Some(h) = history {
                write(&h, hist.to_json())?;
            }
        }

        Command::Finetune { checkpoint, manifest, epochs, batch_size, lr, out, history } => {
            let (base, threshold) = load_checkpoint(&checkpoint)?;
            let config = TrainConfig { finetune_epochs: epochs, batch_size, lr, seed, ..Default::default() };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let subset = load_manifest(&manifest)?;
            let (model, hist) = finetune(&base, &subset, &config)?;
            eprintln!("fine-tuned on {} volumes; final loss {:.4}", subset.len(), hist.train_loss.last().copied().unwrap_or(f64::NAN));
            save_checkpoint(&model, threshold, &out)?;
            if let Some(h) = history {
                write(&h, hist.to_json())?;
            }
        }

        Command::Infer { checkpoint, manifest, scan, threshold, out, text, predictions } => {
            let (model, stored) = load_checkpoint(&checkpoint)?;
            let policy = policy(threshold.unwrap_or(stored as f64))?;
            let input = match manifest {
                Some(p) => load_manifest(&p)?,
                None => scans_manifest(&scan)?,
            };
            let outcome = predict(&model, &input)?;
            for (id, e) in &outcome.failures {
                eprintln!("warning: skipped {id}: {e}");
            }
            let ok: Vec<VolumeRecord> = outcome.manifest.records.iter().filter(|r| r.predicted_prob.is_some()).cloned().collect();
            if ok.is_empty() {
                return Err(anyhow::anyhow!("no volume could be read").into());
            }
            let predicted = outcome.manifest.derive(ok, outcome.manifest.source_description.clone());
            let provenance = Provenance {
                tool_version: VERSION.into(),
                seed: cli.seed,
                checkpoint: Some(checkpoint.display().to_string()),
                slices_per_volume: model.config().input_dims[2],
            };
            let report = generate_report(&predicted, &policy, &provenance)?;
            write(&out, report.to_json() + "\n")?;
            if let Some(t) = text {
                write(&t, report.render_text())?;
            }
            if let Some(p) = predictions {
                save_manifest(&with_absolute_paths(&predicted), &p)?;
            }
            eprintln!("{} of {} volumes flagged at threshold {}", report.flagged_count, report.total_volumes, report.threshold);
        }

        Command::Eval { report, labels, threshold, out } => {
            let report = read_report(&report)?;
            let policy = policy(threshold.unwrap_or(report.threshold))?;
            let (probs, truth) = labeled_probs(&report, labels.as_deref())?;
            if truth.is_empty() {
                return Err(anyhow::anyhow!("no labeled volumes to evaluate").into());
            }
            let m = SessionMetrics {
                threshold: policy.threshold(),
                flagged: report.volumes.iter().filter(|v| apply_threshold(v.p_artifact, &policy).is_artifact()).count(),
                metrics: metrics_at(&probs, &truth, &policy)?,
            };
            emit(out.as_deref(), &(serde_json::to_string_pretty(&m).expect("serializes") + "\n"))?;
        }

        Command::Sweep { report, predictions, labels, out } => {
            let (probs, truth) = match (report, predictions) {
                (Some(r), _) => labeled_probs(&read_report(&r)?, labels.as_deref())?,
                (None, Some(p)) => {
                    let m = load_manifest(&p)?;
                    m.records.iter().filter_map(|r| Some((r.predicted_prob?, r.label?))).unzip()
                }
                (None, None) => return Err(usage("one of --report or --predictions is required")),
            };
            if truth.is_empty() {
                return Err(anyhow::anyhow!("no volumes with both a probability and a label").into());
            }
            emit(out.as_deref(), &threshold_sweep(&probs, &truth)?.to_csv())?;
        }

        Command::Subset { manifest, fraction, out } => {
            let m = load_manifest(&manifest)?;
            let sub = select_finetune_subset(&with_absolute_paths(&m), fraction, seed).map_err(|e| usage(e.to_string()))?;
            save_manifest(&sub, &out)?;
            eprintln!("selected {} of {} volumes", sub.len(), m.len());
        }

        Command::Serve { predictions, bind, state_dir, static_dir, display_dims } => {
            let m = load_manifest(&predictions)?;
            let state_dir = state_dir.unwrap_or_else(|| predictions.parent().unwrap_or(Path::new(".")).join("review"));
            let session = ReviewSession::open(m, &state_dir)?;
            let state = AppState::new(session, ServerOptions { display_dims: display_dims, static_dir });
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(qcnet_review::serve(state, bind)).with_context(|| format!("serving on {bind}"))?;
        }
    }
    Ok(())
}

/// One unlabeled record per volume of each scan; ids are `<stem>_vol-NN`.
fn scans_manifest(scans: &[PathBuf]) -> Result<Manifest> {
    let mut records = Vec::new();
    for path in scans {
        let scan = read_nifti(path)?;
        for v in 0..scan.len() {
            records.push(VolumeRecord::new(format!("{}_vol-{v:02}", scan.subject_id), scan.subject_id.clone(), path.clone(), v));
        }
    }
    Ok(Manifest::new(records, "scans from the command line")?)
}

/// Rewrites scan paths so the manifest resolves from any directory.
fn with_absolute_paths(m: &Manifest) -> Manifest {
    let records = m
        .records
        .iter()
        .map(|r| {
            let mut r2 = r.clone();
            let p = m.resolve(r);
            r2.scan_path = std::path::absolute(&p).unwrap_or(p);
            r2
        })
        .collect();
    let mut out = m.derive(records, m.source_description.clone());
    out.base_dir = None;
    out
}

fn read_report(path: &Path) -> Result<QcReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(QcReport::from_json(&text).with_context(|| format!("parsing report {}", path.display()))?)
}

/// Probabilities and labels of the report's labeled volumes, taking labels
/// from `labels` (matched by id) when given.
fn labeled_probs(report: &QcReport, labels: Option<&Path>) -> Result<(Vec<f64>, Vec<Label>)> {
    let external: Option<HashMap<String, Option<Label>>> = match labels {
        Some(p) => Some(load_manifest(p)?.records.into_iter().map(|r| (r.id, r.label)).collect()),
        None => None,
    };
    Ok(report
        .volumes
        .iter()
        .filter_map(|v| {
            let label = match &external {
                Some(map) => map.get(&v.id).copied().flatten(),
                None => v.label,
            };
            Some((v.p_artifact, label?))
        })
        .unzip())
}
