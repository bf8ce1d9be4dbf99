use crate::error::{shape_err, Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{Element, Tensor};

fn softmax_rows<T: Element>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

fn check_targets(targets: &[usize], rows: usize, classes: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(TensorError::LengthMismatch { expected: rows, actual: targets.len() });
    }
    match targets.iter().position(|&t| t >= classes) {
        Some(row) => Err(TensorError::InvalidTarget { row, target: targets[row], classes }),
        None => Ok(()),
    }
}

pub(crate) fn softmax_backward<T: Element>(shape: &[usize], probs: &[T], dy: &[T], input: Var, grads: &mut Grads<'_, T>) {
    if !grads.wants(input) {
        return;
    }
    let k = shape[1];
    let dx = grads.slot(input);
    for ((p, g), d) in probs.chunks(k).zip(dy.chunks(k)).zip(dx.chunks_mut(k)) {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for j in 0..k {
            d[j] += p[j] * (g[j] - dot);
        }
    }
}

pub(crate) fn cross_entropy_backward<T: Element>(
    shape: &[usize],
    probs: &[T],
    targets: &[usize],
    dy: &[T],
    input: Var,
    grads: &mut Grads<'_, T>,
) {
    if !grads.wants(input) {
        return;
    }
    let (n, k) = (shape[0], shape[1]);
    let scale = dy[0] / T::from_usize(n).unwrap_or_else(T::one);
    let dx = grads.slot(input);
    for (row, &t) in targets.iter().enumerate() {
        let p = probs[row * k + t].max(T::min_positive_value());
        dx[row * k + t] -= scale / p;
    }
}

pub(crate) fn softmax_ce_backward<T: Element>(
    shape: &[usize],
    probs: &[T],
    targets: &[usize],
    dy: &[T],
    input: Var,
    grads: &mut Grads<'_, T>,
) {
    if !grads.wants(input) {
        return;
    }
    let (n, k) = (shape[0], shape[1]);
    let scale = dy[0] / T::from_usize(n).unwrap_or_else(T::one);
    let dx = grads.slot(input);
    for (row, &t) in targets.iter().enumerate() {
        for j in 0..k {
            let onehot = if j == t { T::one() } else { T::zero() };
            dx[row * k + j] += (probs[row * k + j] - onehot) * scale;
        }
    }
}

impl<T: Element> Graph<T> {
    /// Row-wise softmax of `[N, K]` logits (max-subtracted).
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let [_, k] = self.value(input).dims2()?;
        let probs = softmax_rows(self.value(input).data(), k);
        let value = Tensor::from_parts(self.shape(input).to_vec(), probs);
        Ok(self.push(value, Op::Softmax { input }, &[input]))
    }

    /// Mean negative log-likelihood of `targets` under `probs [N, K]`.
    /// Probabilities are floored at the smallest positive normal so a zero
    /// probability gives a large finite loss instead of infinity.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let [n, k] = self.value(probs).dims2()?;
        check_targets(targets, n, k)?;
        let p = self.value(probs).data();
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(row, &t)| -p[row * k + t].max(T::min_positive_value()).to_f64_lossy().ln())
            .sum();
        let value = Tensor::from_parts(vec![1], vec![T::from_f64_lossy(total / n as f64)]);
        Ok(self.push(value, Op::CrossEntropy { probs, targets: targets.to_vec() }, &[probs]))
    }

    /// Fused softmax + cross-entropy on logits, computed in log space. The
    /// gradient w.r.t. the logits is `(p - onehot) / N`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2()?;
        if !self.value(logits).all_finite() {
            return shape_err("softmax_cross_entropy: non-finite logits");
        }
        check_targets(targets, n, k)?;
        let z = self.value(logits).data();
        let mut total = 0f64;
        for (row, &t) in z.chunks(k).zip(targets) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
            let lse = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t].to_f64_lossy();
        }
        let probs = softmax_rows(z, k);
        let value = Tensor::from_parts(vec![1], vec![T::from_f64_lossy(total / n as f64)]);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits]))
    }
}
