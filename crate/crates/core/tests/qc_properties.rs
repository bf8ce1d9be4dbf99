//! Split, metric, sweep and report invariants over random inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;
use qcnet_core::data::{stratified_subject_split, SplitSpec};
use qcnet_core::qc::{
    apply_threshold, compute_metrics, generate_report, metrics_at, threshold_sweep, Provenance, QcReport, ThresholdPolicy,
};
use qcnet_core::{Label, Manifest, VolumeRecord};

fn label(a: bool) -> Label {
    if a {
        Label::Artifact
    } else {
        Label::Normal
    }
}

/// Subjects with `vols[i]` volumes; each volume's flag says artifact or not.
/// The first two subjects are forced artifact and the next two normal.
fn manifest(subjects: &[Vec<bool>]) -> Manifest {
    let mut records = Vec::new();
    for (s, vols) in subjects.iter().enumerate() {
        for (v, &a) in vols.iter().enumerate() {
            let a = match s {
                0 | 1 => a || v == 0,
                2 | 3 => false,
                _ => a,
            };
            records.push(VolumeRecord::new(format!("s{s}_v{v}"), format!("s{s}"), "x.nii", v).with_label(label(a)));
        }
    }
    Manifest::new(records, "prop").unwrap()
}

fn subjects_of(m: &Manifest) -> BTreeSet<String> {
    m.records.iter().map(|r| r.subject_id.clone()).collect()
}

fn probs_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![0.0..=1.0f64, Just(0.5), Just(0.0), Just(1.0)], n),
            proptest::collection::vec(any::<bool>().prop_map(label), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_never_shares_subjects_and_keeps_every_volume(
        subjects in proptest::collection::vec(proptest::collection::vec(proptest::bool::weighted(0.3), 1..6), 4..30),
        fraction in 0.1f64..0.5, seed in any::<u64>(),
    ) {
        let m = manifest(&subjects);
        let (train, val) = stratified_subject_split(&m, &SplitSpec::new(fraction, seed).unwrap()).unwrap();
        prop_assert!(subjects_of(&train).is_disjoint(&subjects_of(&val)));
        let mut ids: Vec<_> = train.records.iter().chain(&val.records).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut all: Vec<_> = m.records.iter().map(|r| r.id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
        let again = stratified_subject_split(&m, &SplitSpec::new(fraction, seed).unwrap()).unwrap();
        prop_assert_eq!(again.1.records, val.records);
    }

    #[test]
    fn metrics_match_counting((probs, labels) in probs_and_labels(), t in 0.0f64..=1.0) {
        let policy = ThresholdPolicy::new(t).unwrap();
        let m = metrics_at(&probs, &labels, &policy).unwrap();
        let flagged: Vec<bool> = probs.iter().map(|&p| p >= t).collect();
        let tp = flagged.iter().zip(&labels).filter(|(f, l)| **f && l.is_artifact()).count();
        let fp = flagged.iter().zip(&labels).filter(|(f, l)| **f && !l.is_artifact()).count();
        let fn_ = flagged.iter().zip(&labels).filter(|(f, l)| !**f && l.is_artifact()).count();
        prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, probs.len() - tp - fp - fn_));
        prop_assert_eq!(m.recall, (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
        prop_assert_eq!(m.precision, (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64));
        let decisions: Vec<Label> = probs.iter().map(|&p| apply_threshold(p, &policy)).collect();
        prop_assert_eq!(compute_metrics(&decisions, &labels).unwrap(), m);
    }

    #[test]
    fn sweep_points_agree_with_metrics_and_are_monotone((probs, labels) in probs_and_labels()) {
        let curve = threshold_sweep(&probs, &labels).unwrap();
        prop_assert!(curve.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
        for w in curve.points.windows(2) {
            prop_assert!(w[1].flagged <= w[0].flagged);
            if let (Some(a), Some(b)) = (w[0].recall, w[1].recall) {
                prop_assert!(b <= a);
            }
        }
        for p in &curve.points {
            let m = metrics_at(&probs, &labels, &ThresholdPolicy::new(p.threshold).unwrap()).unwrap();
            prop_assert_eq!((p.precision, p.recall, p.accuracy, p.flagged), (m.precision, m.recall, m.accuracy, m.flagged()));
        }
    }

    #[test]
    fn report_round_trips_and_is_consistent((probs, labels) in probs_and_labels(), t in 0.0f64..=1.0, slices in 1usize..100) {
        let records = probs.iter().zip(&labels).enumerate().map(|(i, (&p, &l))| {
            let mut r = VolumeRecord::new(format!("v{i:03}"), format!("s{}", i / 4), "x.nii", i % 4).with_label(l);
            r.predicted_prob = Some(p);
            r
        }).collect();
        let m = Manifest::new(records, "prop").unwrap();
        let prov = Provenance { tool_version: "test".into(), seed: Some(1), checkpoint: None, slices_per_volume: slices };
        let report = generate_report(&m, &ThresholdPolicy::new(t).unwrap(), &prov).unwrap();
        prop_assert!(report.is_consistent());
        prop_assert!(report.volumes.windows(2).all(|w| w[0].p_artifact >= w[1].p_artifact));
        let back = QcReport::from_json(&report.to_json()).unwrap();
        prop_assert_eq!(&back, &report);
        let metrics = report.metrics.unwrap();
        prop_assert_eq!(metrics.evaluated, probs.len());
    }
}

#[test]
fn split_rejects_a_class_with_one_subject() {
    let m = manifest(&[vec![true], vec![false], vec![false]]);
    assert!(stratified_subject_split(&m, &SplitSpec::new(0.25, 0).unwrap()).is_err());
}
