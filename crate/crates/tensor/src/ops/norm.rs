//! Batch normalisation over the channel axis of `[N, C, ...]` tensors.

use crate::error::{shape_err, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{Element, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (biased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub enum BnMode<'a, T> {
    /// Normalise with batch statistics and blend them into `stats`.
    Train { stats: &'a mut RunningStats<T>, momentum: T },
    Eval { stats: &'a RunningStats<T> },
}

fn split_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!("batchnorm needs [N,C,...], got {shape:?}"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

pub(crate) fn channel_values<T: Copy>(data: &[T], n: usize, c: usize, s: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| data[(b * c + ch) * s..(b * c + ch + 1) * s].iter().copied())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Element>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    dy: &[T],
    input: Var,
    gamma_var: Var,
    beta_var: Var,
    grads: &mut Grads<'_, T>,
) {
    let (n, c, s) = split_dims(shape).expect("validated on forward");
    let m = (n * s) as f64;
    let mut sum_dy = vec![0f64; c];
    let mut sum_dy_xhat = vec![0f64; c];
    for ch in 0..c {
        for (g, xh) in channel_values(dy, n, c, s, ch).zip(channel_values(xhat, n, c, s, ch)) {
            sum_dy[ch] += g.to_f64_lossy();
            sum_dy_xhat[ch] += g.to_f64_lossy() * xh.to_f64_lossy();
        }
    }
    if grads.wants(input) {
        let dx = grads.slot(input);
        for b in 0..n {
            for ch in 0..c {
                let gam = gamma[ch].to_f64_lossy();
                let istd = inv_std[ch].to_f64_lossy();
                let off = (b * c + ch) * s;
                for j in off..off + s {
                    let g = dy[j].to_f64_lossy();
                    let v = if train {
                        // dxhat = dy * gamma; sums of dxhat are gamma * sums of dy
                        gam * istd * (g - sum_dy[ch] / m - xhat[j].to_f64_lossy() * sum_dy_xhat[ch] / m)
                    } else {
                        gam * istd * g
                    };
                    dx[j] += T::from_f64_lossy(v);
                }
            }
        }
    }
    if grads.wants(gamma_var) {
        grads.add(gamma_var, sum_dy_xhat.iter().map(|&v| T::from_f64_lossy(v)).collect());
    }
    if grads.wants(beta_var) {
        grads.add(beta_var, sum_dy.iter().map(|&v| T::from_f64_lossy(v)).collect());
    }
}

impl<T: Element> Graph<T> {
    /// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
    ///
    /// Train mode uses the batch mean and biased batch variance and updates
    /// `stats` as `stats = (1 - momentum) * stats + momentum * batch`.
    pub fn batchnorm3d(&mut self, input: Var, gamma: Var, beta: Var, mode: BnMode<'_, T>, eps: T) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (n, c, s) = split_dims(&shape)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return shape_err(format!("batchnorm {name} must be [{c}], got {:?}", self.shape(v)));
            }
        }
        let x = self.value(input).data();
        let (mean, var, train): (Vec<f64>, Vec<f64>, bool) = match &mode {
            BnMode::Train { .. } => {
                let m = (n * s) as f64;
                let mean: Vec<f64> = (0..c)
                    .map(|ch| channel_values(x, n, c, s, ch).map(|v| v.to_f64_lossy()).sum::<f64>() / m)
                    .collect();
                let var = (0..c)
                    .map(|ch| {
                        channel_values(x, n, c, s, ch)
                            .map(|v| (v.to_f64_lossy() - mean[ch]).powi(2))
                            .sum::<f64>()
                            / m
                    })
                    .collect();
                (mean, var, true)
            }
            BnMode::Eval { stats } => {
                if stats.channels() != c || stats.var.len() != c {
                    return shape_err(format!("running stats have {} channels, input {c}", stats.channels()));
                }
                let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
                (f(&stats.mean), f(&stats.var), false)
            }
        };
        let eps = eps.to_f64_lossy();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * s;
                let (g, bt) = (gam[ch].to_f64_lossy(), bet[ch].to_f64_lossy());
                for j in off..off + s {
                    let xh = (x[j].to_f64_lossy() - mean[ch]) * inv_std[ch];
                    xhat[j] = T::from_f64_lossy(xh);
                    out[j] = T::from_f64_lossy(g * xh + bt);
                }
            }
        }
        if let BnMode::Train { stats, momentum } = mode {
            if stats.channels() != c || stats.var.len() != c {
                return shape_err(format!("running stats have {} channels, input {c}", stats.channels()));
            }
            let mom = momentum.to_f64_lossy();
            for ch in 0..c {
                let blend = |old: T, new: f64| T::from_f64_lossy((1.0 - mom) * old.to_f64_lossy() + mom * new);
                stats.mean[ch] = blend(stats.mean[ch], mean[ch]);
                stats.var[ch] = blend(stats.var[ch], var[ch]);
            }
        }
        let value = Tensor::from_parts(shape, out);
        let inv_std = inv_std.into_iter().map(T::from_f64_lossy).collect();
        Ok(self.push(value, Op::BatchNorm { input, gamma, beta, xhat, inv_std, train }, &[input, gamma, beta]))
    }
}
