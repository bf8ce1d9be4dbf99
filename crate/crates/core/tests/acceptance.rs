//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Criteria 6 and 7 train real models and take several minutes on one core.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qcnet_core::data::{load_dataset, stratified_subject_split, SplitSpec};
use qcnet_core::model::{decode_checkpoint, encode_checkpoint};
use qcnet_core::phantom::{generate_dataset, GeneratorConfig};
use qcnet_core::preprocess::percentile;
use qcnet_core::qc::{
    annotation_savings, compute_metrics, format_percent, metrics_at, predict_dataset, threshold_sweep, ThresholdPolicy,
};
use qcnet_core::trainer::{finetune_on, select_finetune_subset, train_on, TrainConfig};
use qcnet_core::{
    build_model, decode_nifti, encode_nifti, preprocess, Label, Manifest, Model, ModelConfig, Scan4D, Volume3D,
    VolumeRecord,
};
use qcnet_tensor::{grad_check, grad_check_random, BnMode, Graph, RunningStats, Tensor, Var, BN_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------- 1

fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> qcnet_tensor::Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::<f64>::randn(&[n], 1.0, seed)?;
    g.weighted_sum(y, w.data())
}

fn toy_network(g: &mut Graph<f64>, v: &[Var]) -> qcnet_tensor::Result<Var> {
    let mut stats = RunningStats::new(3);
    let h = g.conv3d(v[0], v[1], v[2], 1, 1)?;
    let h = g.batchnorm3d(h, v[3], v[4], BnMode::Train { stats: &mut stats, momentum: 0.1 }, BN_EPS)?;
    let h = g.relu(h)?;
    let h2 = g.conv3d(h, v[5], v[6], 1, 1)?;
    let h = g.concat_channels(h, h2)?;
    let pooled = g.global_avg_pool(h)?;
    let logits = g.dense(pooled, v[7], v[8])?;
    g.softmax_cross_entropy(logits, &[0, 1])
}

fn gradient_checks() -> Outcome {
    const TOL: f64 = 1e-3;
    let t0 = Instant::now();
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut run = |name, r: qcnet_tensor::Result<qcnet_tensor::GradCheckReport>| -> Result<(), String> {
        results.push((name, r.map_err(e)?.max_rel_error));
        Ok(())
    };

    for (stride, pad) in [(1, 1), (2, 1)] {
        run(
            "conv3d",
            grad_check_random(&[&[2, 2, 4, 4, 3], &[3, 2, 3, 3, 3], &[3]], 7 + stride as u64, |g, v| {
                let y = g.conv3d(v[0], v[1], v[2], stride, pad)?;
                probe(g, y, 99)
            }),
        )?;
    }
    run(
        "conv3d 1x1x1",
        grad_check_random(&[&[2, 3, 2, 3, 2], &[4, 3, 1, 1, 1], &[4]], 3, |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], 1, 0)?;
            probe(g, y, 5)
        }),
    )?;
    let bn_shapes: [&[usize]; 3] = [&[2, 3, 2, 2, 3], &[3], &[3]];
    run(
        "batchnorm (train)",
        grad_check_random(&bn_shapes, 11, |g, v| {
            let mut stats = RunningStats::new(3);
            let y = g.batchnorm3d(v[0], v[1], v[2], BnMode::Train { stats: &mut stats, momentum: 0.1 }, BN_EPS)?;
            probe(g, y, 12)
        }),
    )?;
    let stats = RunningStats { mean: vec![0.2, -0.1, 0.4], var: vec![1.5, 0.7, 2.0] };
    run(
        "batchnorm (eval)",
        grad_check_random(&bn_shapes, 13, |g, v| {
            let y = g.batchnorm3d(v[0], v[1], v[2], BnMode::Eval { stats: &stats }, BN_EPS)?;
            probe(g, y, 14)
        }),
    )?;
    // Inputs kept at least 0.1 from the ReLU kink, where the derivative jumps.
    let mut x = Tensor::<f64>::randn(&[2, 2, 3, 3, 2], 1.0, 21).map_err(e)?;
    for v in x.data_mut() {
        *v = v.signum() * (v.abs() + 0.1);
    }
    run(
        "relu",
        grad_check(&[x], |g, v| {
            let y = g.relu(v[0])?;
            probe(g, y, 22)
        }),
    )?;
    run(
        "avgpool",
        grad_check_random(&[&[2, 2, 4, 5, 3]], 31, |g, v| {
            let y = g.avgpool3d(v[0], 2, 2)?;
            probe(g, y, 32)
        }),
    )?;
    run(
        "global avgpool",
        grad_check_random(&[&[2, 3, 2, 3, 2]], 33, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            probe(g, y, 34)
        }),
    )?;
    run(
        "dense",
        grad_check_random(&[&[4, 5], &[5, 3], &[3]], 41, |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            probe(g, y, 42)
        }),
    )?;
    run(
        "softmax",
        grad_check_random(&[&[3, 4]], 53, |g, v| {
            let p = g.softmax(v[0])?;
            probe(g, p, 54)
        }),
    )?;
    let targets = [1, 0, 1, 1, 0];
    run(
        "cross-entropy",
        grad_check_random(&[&[5, 2]], 52, |g, v| {
            let p = g.softmax(v[0])?;
            g.cross_entropy(p, &targets)
        }),
    )?;
    run("softmax+CE", grad_check_random(&[&[5, 2]], 51, |g, v| g.softmax_cross_entropy(v[0], &targets)))?;
    run(
        "concat",
        grad_check_random(&[&[2, 2, 2, 2, 3], &[2, 3, 2, 2, 3]], 61, |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            probe(g, y, 62)
        }),
    )?;
    let toy: [&[usize]; 9] =
        [&[2, 1, 3, 4, 3], &[3, 1, 3, 3, 3], &[3], &[3], &[3], &[2, 3, 3, 3, 3], &[2], &[5, 2], &[2]];
    run("toy network", grad_check_random(&toy, 71, toy_network))?;

    let elapsed = t0.elapsed();
    let (worst_name, worst) = results.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    for (name, err) in &results {
        ensure(*err <= TOL, || format!("{name}: max relative error {err:.2e} > {TOL:.0e}"))?;
    }
    ensure(elapsed <= Duration::from_secs(120), || format!("took {elapsed:.1?} (limit 2 min)"))?;
    Ok(format!("{} checks, worst {worst_name} at {worst:.2e}", results.len()))
}

// ---------------------------------------------------------------- 2

fn naive_conv3d(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, d, h, wd] = x.dims5().unwrap();
    let [k, _, kd, kh, kw] = w.dims5().unwrap();
    let out_extent = |len: usize, kl: usize| (len + 2 * pad - kl) / stride + 1;
    let (od, oh, ow) = (out_extent(d, kd), out_extent(h, kh), out_extent(wd, kw));
    let mut out = vec![0.0; n * k * od * oh * ow];
    for ni in 0..n {
        for ki in 0..k {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[ki] as f64;
                        for ci in 0..c {
                            for dz in 0..kd {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let z = (oz * stride + dz) as isize - pad as isize;
                                        let y = (oy * stride + dy) as isize - pad as isize;
                                        let xx = (ox * stride + dx) as isize - pad as isize;
                                        if z < 0 || y < 0 || xx < 0 || z >= d as isize || y >= h as isize || xx >= wd as isize {
                                            continue;
                                        }
                                        let xv = x.data()[(((ni * c + ci) * d + z as usize) * h + y as usize) * wd + xx as usize];
                                        let wv = w.data()[(((ki * c + ci) * kd + dz) * kh + dy) * kw + dx];
                                        acc += wv as f64 * xv as f64;
                                    }
                                }
                            }
                        }
                        out[(((ni * k + ki) * od + oz) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
    }
    (vec![n, k, od, oh, ow], out)
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let (n, c, k) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let ks = if rng.random_bool(0.25) { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let pad = if ks == 3 { rng.random_range(0..=1) } else { 0 };
        let lo = if pad == 0 { ks } else { 1 };
        let dims = [rng.random_range(lo..=7), rng.random_range(lo..=7), rng.random_range(lo..=7)];
        let seed = rng.random::<u64>();
        let x = Tensor::<f32>::uniform(&[n, c, dims[0], dims[1], dims[2]], -1.0, 1.0, seed).map_err(e)?;
        let w = Tensor::<f32>::uniform(&[k, c, ks, ks, ks], -0.5, 0.5, seed ^ 1).map_err(e)?;
        let b = Tensor::<f32>::uniform(&[k], -1.0, 1.0, seed ^ 2).map_err(e)?;

        let mut g = Graph::<f32>::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv3d(xv, wv, bv, stride, pad).map_err(e)?;
        let fast = g.value(y);
        let (shape, slow) = naive_conv3d(&x, &w, &b, stride, pad);
        ensure(fast.shape() == shape.as_slice(), || format!("case {case}: shape {:?} vs {shape:?}", fast.shape()))?;
        for (a, r) in fast.data().iter().zip(&slow) {
            let d = (*a as f64 - r).abs();
            worst = worst.max(d);
            ensure(d <= 1e-5, || format!("case {case}: {a} vs {r}"))?;
        }
    }
    Ok(format!("50 cases, max abs difference {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn random_manifest(rng: &mut ChaCha8Rng) -> Manifest {
    let subjects = rng.random_range(8..=40);
    let mut records = Vec::new();
    for s in 0..subjects {
        let vols = rng.random_range(1..=6);
        // At least two subjects per class.
        let p_art = match s {
            0 | 1 => 1.0,
            2 | 3 => 0.0,
            _ => rng.random_range(0.0..=0.5),
        };
        for v in 0..vols {
            let label = if s < 2 && v == 0 {
                Label::Artifact
            } else if (2..4).contains(&s) || !rng.random_bool(p_art) {
                Label::Normal
            } else {
                Label::Artifact
            };
            records.push(VolumeRecord::new(format!("s{s}_v{v}"), format!("s{s}"), "scan.nii", v).with_label(label));
        }
    }
    Manifest::new(records, "random").unwrap()
}

fn split_leakage() -> Outcome {
    use std::collections::{BTreeMap, BTreeSet};
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..200 {
        let m = random_manifest(&mut rng);
        let spec = SplitSpec::new(0.25, rng.random()).map_err(e)?;
        let (train, val) = stratified_subject_split(&m, &spec).map_err(e)?;
        let subjects = |m: &Manifest| m.records.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>();
        let (ts, vs) = (subjects(&train), subjects(&val));
        ensure(ts.is_disjoint(&vs), || format!("manifest {i}: subject in both splits"))?;
        ensure(train.len() + val.len() == m.len(), || format!("manifest {i}: volumes lost"))?;

        let mut class: BTreeMap<&str, bool> = BTreeMap::new();
        for r in &m.records {
            *class.entry(&r.subject_id).or_default() |= r.label == Some(Label::Artifact);
        }
        for artifact in [true, false] {
            let all: Vec<_> = class.iter().filter(|(_, a)| **a == artifact).map(|(s, _)| *s).collect();
            let in_val = all.iter().filter(|s| vs.contains(**s)).count();
            let target = 0.25 * all.len() as f64;
            ensure((in_val as f64 - target).abs() <= 1.0, || {
                format!("manifest {i}: {in_val} of {} subjects in validation", all.len())
            })?;
        }
    }
    Ok("200 manifests, no shared subjects, class counts within 1 of 25%".into())
}

// ---------------------------------------------------------------- 4

fn metrics_oracle() -> Outcome {
    use Label::{Artifact as A, Normal as N};
    let mut truth = vec![A; 8];
    truth.extend([N; 2]);
    truth.push(A);
    truth.extend([N; 9]);
    let mut pred = vec![A; 10];
    pred.extend([N; 10]);
    let m = compute_metrics(&pred, &truth).map_err(e)?;
    let r3 = |x: Option<f64>| x.map(|v| (v * 1000.0).round() / 1000.0);
    ensure((m.tp, m.fp, m.fn_, m.tn) == (8, 2, 1, 9), || format!("counts {m:?}"))?;
    ensure(r3(m.precision) == Some(0.8) && r3(m.recall) == Some(0.889) && r3(m.accuracy) == Some(0.85), || {
        format!("{m:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let n = rng.random_range(1..=60);
        let lab = |r: &mut ChaCha8Rng| if r.random_bool(0.4) { A } else { N };
        let t: Vec<Label> = (0..n).map(|_| lab(&mut rng)).collect();
        let p: Vec<Label> = (0..n).map(|_| lab(&mut rng)).collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (a, b) in p.iter().zip(&t) {
            match (a, b) {
                (A, A) => tp += 1,
                (A, N) => fp += 1,
                (N, A) => fn_ += 1,
                (N, N) => tn += 1,
            }
        }
        let div = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let got = compute_metrics(&p, &t).map_err(e)?;
        let want = (tp, fp, fn_, tn, div(tp, tp + fp), div(tp, tp + fn_), div(tp + tn, n));
        ensure((got.tp, got.fp, got.fn_, got.tn, got.precision, got.recall, got.accuracy) == want, || {
            format!("vector {i}: {got:?} vs {want:?}")
        })?;
    }
    Ok("0.800 / 0.889 / 0.850 and 1000 brute-force vectors".into())
}

// ---------------------------------------------------------------- 5

fn threshold_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..300 {
        let n = rng.random_range(1..=80);
        let probs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.5 } else { rng.random() }).collect();
        let labels: Vec<Label> =
            (0..n).map(|_| if rng.random_bool(0.3) { Label::Artifact } else { Label::Normal }).collect();
        let mut ts: Vec<f64> = (0..12).map(|_| rng.random()).chain([0.0, 0.5, 1.0]).collect();
        ts.sort_by(f64::total_cmp);
        let mut prev: Option<(Vec<bool>, Option<f64>)> = None;
        for &t in &ts {
            let policy = ThresholdPolicy::new(t).map_err(e)?;
            let flagged: Vec<bool> = probs.iter().map(|&p| qcnet_core::qc::apply_threshold(p, &policy).is_artifact()).collect();
            let recall = metrics_at(&probs, &labels, &policy).map_err(e)?.recall;
            if let Some((pf, pr)) = &prev {
                ensure(flagged.iter().zip(pf).all(|(now, before)| !now || *before), || {
                    format!("set {i}: raising the threshold to {t} flagged a new volume")
                })?;
                if let (Some(a), Some(b)) = (recall, pr) {
                    ensure(a <= *b, || format!("set {i}: recall rose at {t}"))?;
                }
            }
            prev = Some((flagged, recall));
        }
        let curve = threshold_sweep(&probs, &labels).map_err(e)?;
        ensure(curve.points.windows(2).all(|w| w[1].flagged <= w[0].flagged), || format!("set {i}: sweep not monotone"))?;
    }
    Ok("300 random sets, flagged sets nested and recall non-increasing".into())
}

// ---------------------------------------------------------------- 6, 7

const MODEL_SEED: u64 = 7;
const SUBSET_SEED: u64 = 1;

fn generator(n_subjects: usize, seed: u64, prefix: &str, severity: f64) -> GeneratorConfig {
    GeneratorConfig { n_subjects, volumes_per_subject: 10, seed, subject_prefix: prefix.into(), severity, ..Default::default() }
}

/// Training and held-out test sets of distribution A, then the unlabeled pool
/// and test set of distribution B, where every artifact has half strength.
fn a_train() -> GeneratorConfig {
    generator(20, 11, "sub", 1.0)
}
fn a_test() -> GeneratorConfig {
    generator(10, 12, "test", 1.0)
}
fn b_pool() -> GeneratorConfig {
    generator(40, 21, "b", 0.5)
}
fn b_test() -> GeneratorConfig {
    generator(10, 22, "bt", 0.5)
}

fn dataset(cfg: &GeneratorConfig, root: &Path, dims: [usize; 3]) -> Result<qcnet_core::data::Dataset, String> {
    let m = generate_dataset(cfg, root.join(&cfg.subject_prefix)).map_err(e)?;
    load_dataset(&m, dims).map_err(e)
}

fn recall_on(model: &Model, data: &qcnet_core::data::Dataset) -> Result<qcnet_core::qc::Metrics, String> {
    let probs = predict_dataset(model, data).map_err(e)?;
    metrics_at(&probs, &data.labels().ok_or("unlabeled test set")?, &ThresholdPolicy::default()).map_err(e)
}

fn baseline_training(root: &Path) -> Result<(String, Model, Duration), String> {
    let t0 = Instant::now();
    let cfg = ModelConfig::desk_32(MODEL_SEED);
    let train = dataset(&a_train(), root, cfg.input_dims)?;
    let test = dataset(&a_test(), root, cfg.input_dims)?;
    let tc = TrainConfig { epochs: 20, batch_size: 5, lr: 1e-4, seed: MODEL_SEED, ..Default::default() };
    let (model, _) = train_on(build_model(&cfg).map_err(e)?, &train, None, &tc).map_err(e)?;
    let m = recall_on(&model, &test)?;
    let elapsed = t0.elapsed();
    let recall = m.recall.ok_or("no artifacts in the test set")?;
    let detail = format!("recall {recall:.3} (tp {} fn {}, precision {:.3}) in {elapsed:.0?}", m.tp, m.fn_, m.precision.unwrap_or(0.0));
    ensure(recall >= 0.80, || detail.clone())?;
    ensure(elapsed <= Duration::from_secs(30 * 60), || format!("{detail}; over 30 min"))?;
    Ok((detail, model, elapsed))
}

fn finetune_lift(root: &Path, base: &Model, base_time: Duration) -> Outcome {
    let t0 = Instant::now();
    let dims = base.config().input_dims;
    let pool_cfg = b_pool();
    let pool = generate_dataset(&pool_cfg, root.join(&pool_cfg.subject_prefix)).map_err(e)?;
    let test = dataset(&b_test(), root, dims)?;
    let subset = select_finetune_subset(&pool, 0.1, SUBSET_SEED).map_err(e)?;
    let subset = load_dataset(&subset, dims).map_err(e)?;
    let before = recall_on(base, &test)?.recall.ok_or("no artifacts in the test set")?;
    let tc = TrainConfig { seed: SUBSET_SEED, ..Default::default() };
    let (tuned, _) = finetune_on(base, &subset, &tc).map_err(e)?;
    let after = recall_on(&tuned, &test)?.recall.ok_or("no artifacts in the test set")?;
    let elapsed = base_time + t0.elapsed();
    let detail = format!(
        "recall {before:.3} -> {after:.3} (+{:.1} pp) from {} volumes in {elapsed:.0?} including base training",
        100.0 * (after - before),
        subset.len()
    );
    ensure(after - before >= 0.10 - 1e-12, || detail.clone())?;
    ensure(elapsed <= Duration::from_secs(15 * 60), || format!("{detail}; over 15 min"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn savings() -> Outcome {
    let s = annotation_savings(222, 80).map_err(e)?;
    let text = format_percent(s);
    ensure(s == 0.9875 && text == "98%", || format!("{s} formatted as {text}"))?;
    Ok(format!("{s} -> {text}"))
}

// ---------------------------------------------------------------- 9

fn determinism(root: &Path) -> Outcome {
    let cfg = ModelConfig::desk_32(3);
    let small = GeneratorConfig { n_subjects: 4, volumes_per_subject: 5, artifact_rate: 0.5, ..generator(4, 31, "det", 1.0) };
    let data = dataset(&small, root, cfg.input_dims)?;
    let tc = TrainConfig { epochs: 2, seed: 3, ..Default::default() };
    let run = || -> Result<Vec<u8>, String> {
        let (m, _) = train_on(build_model(&cfg).map_err(e)?, &data, None, &tc).map_err(e)?;
        Ok(encode_checkpoint(&m, 0.5))
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "two training runs produced different checkpoints".into())?;

    let (model, t) = decode_checkpoint(&a).map_err(e)?;
    ensure(t == 0.5 && encode_checkpoint(&model, t) == a, || "checkpoint re-encode differs".into())?;
    let fresh = decode_checkpoint(&b).map_err(e)?.0;
    let (p1, p2) = (predict_dataset(&model, &data).map_err(e)?, predict_dataset(&fresh, &data).map_err(e)?);
    ensure(p1.iter().zip(&p2).all(|(x, y)| x.to_bits() == y.to_bits()), || "reloaded predictions differ".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dims = [7, 5, 4];
    let vols = (0..3)
        .map(|_| {
            let vox = (0..dims.iter().product()).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            Volume3D::new(dims, [1.5, 1.5, 2.0], vox)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let scan = Scan4D::new(vols, "rt").map_err(e)?;
    let bytes = encode_nifti(&scan).map_err(e)?;
    let back = decode_nifti(&bytes, "rt").map_err(e)?;
    let same = back.volumes.len() == scan.volumes.len()
        && back.volumes.iter().zip(&scan.volumes).all(|(x, y)| {
            x.dims() == y.dims()
                && x.spacing() == y.spacing()
                && x.voxels().iter().zip(y.voxels()).all(|(p, q)| p.to_bits() == q.to_bits())
        });
    ensure(same && encode_nifti(&back).map_err(e)? == bytes, || "NIfTI round trip changed the data".into())?;
    Ok(format!("identical {}-byte checkpoints, checkpoint and NIfTI round trips exact", a.len()))
}

// ---------------------------------------------------------------- 10

fn preprocessing() -> Outcome {
    // Slice z holds the constant z + 1, so each output slice names its source.
    let layered = |nz: usize| {
        let vox = (0..nz).flat_map(|z| std::iter::repeat_n(z as f32 + 1.0, 96 * 96)).collect();
        Volume3D::new([96, 96, nz], [2.0; 3], vox)
    };
    let slab = 96 * 96;

    let long = layered(80).map_err(e)?;
    let out = preprocess(&long, [96, 96, 70]).map_err(e)?;
    ensure(out.dims() == [96, 96, 70], || format!("dims {:?}", out.dims()))?;
    let kept = &long.voxels()[5 * slab..75 * slab];
    let p99 = percentile(kept, 0.99);
    for k in 0..70 {
        let want = ((k + 6) as f32 / p99).min(2.0);
        ensure(out.slice_z(k).iter().all(|&v| v == want), || format!("80 slices: output slice {k} is not input slice {}", k + 5))?;
    }

    let short = layered(60).map_err(e)?;
    let out = preprocess(&short, [96, 96, 70]).map_err(e)?;
    ensure(out.dims() == [96, 96, 70], || format!("dims {:?}", out.dims()))?;
    for k in 0..70 {
        let ok = if (5..65).contains(&k) {
            let first = out.slice_z(k)[0];
            first > 0.0 && out.slice_z(k).iter().all(|&v| v == first)
        } else {
            out.slice_z(k).iter().all(|&v| v == 0.0)
        };
        ensure(ok, || format!("60 slices: output slice {k} wrong (expected 5 zero slices each side)"))?;
    }
    let ratios = (5..65).all(|k| {
        let r = out.slice_z(k)[0] / out.slice_z(5)[0];
        let want = (k - 4) as f32;
        (r - want).abs() <= 1e-4 * want || out.slice_z(k)[0] == 2.0
    });
    ensure(ratios, || "60 slices: source order not preserved".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..40 {
        let dims = [rng.random_range(8..=128), rng.random_range(8..=128), rng.random_range(1..=110)];
        let vox = (0..dims.iter().product()).map(|_| rng.random_range(0.0f32..100.0)).collect();
        let v = Volume3D::new(dims, [1.0; 3], vox).map_err(e)?;
        let out = preprocess(&v, [96, 96, 70]).map_err(e)?;
        ensure(out.dims() == [96, 96, 70] && out.len() == 96 * 96 * 70, || format!("{dims:?} -> {:?}", out.dims()))?;
    }
    Ok("80 -> central 70, 60 -> 5 + 60 + 5, 40 random inputs reach 96x96x70".into())
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, t: Instant, r: Outcome| {
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    };

    let t = Instant::now();
    report(1, "gradient checks", t, gradient_checks());
    let t = Instant::now();
    report(2, "conv3d oracle", t, conv_oracle());
    let t = Instant::now();
    report(3, "subject split", t, split_leakage());
    let t = Instant::now();
    report(4, "metrics", t, metrics_oracle());
    let t = Instant::now();
    report(5, "threshold monotonicity", t, threshold_monotonicity());
    let t = Instant::now();
    let base = baseline_training(root);
    let (r6, base) = match base {
        Ok((d, m, time)) => (Ok(d), Some((m, time))),
        Err(d) => (Err(d), None),
    };
    report(6, "baseline recall", t, r6);
    let t = Instant::now();
    let r7 = match &base {
        Some((m, time)) => finetune_lift(root, m, *time),
        None => Err("no base model (criterion 6 errored)".into()),
    };
    report(7, "fine-tuning lift", t, r7);
    let t = Instant::now();
    report(8, "annotation savings", t, savings());
    let t = Instant::now();
    report(9, "determinism", t, determinism(root));
    let t = Instant::now();
    report(10, "preprocessing", t, preprocessing());

    if failed == 0 {
        println!("all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
