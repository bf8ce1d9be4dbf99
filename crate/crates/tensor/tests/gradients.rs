//! Analytic gradients against central finite differences, in f64.

use qcnet_tensor::{grad_check, grad_check_random, BnMode, Graph, Result, RunningStats, Tensor, Var, BN_EPS};

const TOL: f64 = 1e-3;

/// Random upstream weights so every output element carries a distinct signal.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::<f64>::randn(&[n], 1.0, seed)?;
    g.weighted_sum(y, w.data())
}

#[test]
fn conv3d_gradients() {
    let shapes: [&[usize]; 3] = [&[2, 2, 4, 4, 3], &[3, 2, 3, 3, 3], &[3]];
    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        let r = grad_check_random(&shapes, 7, |g, v| {
            let y = g.conv3d(v[0], v[1], v[2], stride, pad)?;
            probe(g, y, 99)
        })
        .unwrap();
        assert!(r.max_rel_error <= TOL, "stride {stride} pad {pad}: {r:?}");
    }
}

#[test]
fn pointwise_conv3d_gradients() {
    let r = grad_check_random(&[&[2, 3, 2, 3, 2], &[4, 3, 1, 1, 1], &[4]], 3, |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 1, 0)?;
        probe(g, y, 5)
    })
    .unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let shapes: [&[usize]; 3] = [&[2, 3, 2, 2, 3], &[3], &[3]];
    let train = grad_check_random(&shapes, 11, |g, v| {
        let mut stats = RunningStats::new(3);
        let y = g.batchnorm3d(v[0], v[1], v[2], BnMode::Train { stats: &mut stats, momentum: 0.1 }, BN_EPS)?;
        probe(g, y, 12)
    })
    .unwrap();
    assert!(train.max_rel_error <= TOL, "{train:?}");

    let stats = RunningStats { mean: vec![0.2, -0.1, 0.4], var: vec![1.5, 0.7, 2.0] };
    let eval = grad_check_random(&shapes, 13, |g, v| {
        let y = g.batchnorm3d(v[0], v[1], v[2], BnMode::Eval { stats: &stats }, BN_EPS)?;
        probe(g, y, 14)
    })
    .unwrap();
    assert!(eval.max_rel_error <= TOL, "{eval:?}");
}

#[test]
fn relu_gradients_away_from_kink() {
    let mut x = Tensor::<f64>::randn(&[2, 2, 3, 3, 2], 1.0, 21).unwrap();
    for v in x.data_mut() {
        *v = v.signum() * (v.abs() + 0.1);
    }
    let r = grad_check(&[x], |g, v| {
        let y = g.relu(v[0])?;
        probe(g, y, 22)
    })
    .unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

#[test]
fn pooling_gradients() {
    let avg = grad_check_random(&[&[2, 2, 4, 5, 3]], 31, |g, v| {
        let y = g.avgpool3d(v[0], 2, 2)?;
        probe(g, y, 32)
    })
    .unwrap();
    assert!(avg.max_rel_error <= TOL, "{avg:?}");
    let gap = grad_check_random(&[&[2, 3, 2, 3, 2]], 33, |g, v| {
        let y = g.global_avg_pool(v[0])?;
        probe(g, y, 34)
    })
    .unwrap();
    assert!(gap.max_rel_error <= TOL, "{gap:?}");
}

#[test]
fn dense_gradients() {
    let r = grad_check_random(&[&[4, 5], &[5, 3], &[3]], 41, |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        probe(g, y, 42)
    })
    .unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

#[test]
fn softmax_and_cross_entropy_gradients() {
    let targets = [1, 0, 1, 1, 0];
    let fused = grad_check_random(&[&[5, 2]], 51, |g, v| g.softmax_cross_entropy(v[0], &targets)).unwrap();
    assert!(fused.max_rel_error <= TOL, "{fused:?}");
    let chained = grad_check_random(&[&[5, 2]], 52, |g, v| {
        let p = g.softmax(v[0])?;
        g.cross_entropy(p, &targets)
    })
    .unwrap();
    assert!(chained.max_rel_error <= TOL, "{chained:?}");
    let softmax_only = grad_check_random(&[&[3, 4]], 53, |g, v| {
        let p = g.softmax(v[0])?;
        probe(g, p, 54)
    })
    .unwrap();
    assert!(softmax_only.max_rel_error <= TOL, "{softmax_only:?}");
}

#[test]
fn concat_gradients() {
    let r = grad_check_random(&[&[2, 2, 2, 2, 3], &[2, 3, 2, 2, 3]], 61, |g, v| {
        let y = g.concat_channels(v[0], v[1])?;
        probe(g, y, 62)
    })
    .unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

/// conv → BN → ReLU → conv → concat → GAP → dense → softmax-CE.
pub fn toy_network(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
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

#[test]
fn two_layer_toy_network_gradients() {
    let shapes: [&[usize]; 9] = [
        &[2, 1, 3, 4, 3],
        &[3, 1, 3, 3, 3],
        &[3],
        &[3],
        &[3],
        &[2, 3, 3, 3, 3],
        &[2],
        &[5, 2],
        &[2],
    ];
    let r = grad_check_random(&shapes, 71, toy_network).unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}
