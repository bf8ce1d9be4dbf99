//! Adam with bias correction.

use crate::error::{Result, TensorError};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::InvalidHyperparameter(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        Ok(())
    }
}

/// First/second moment estimates for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
    config: AdamConfig,
}

impl<T: Element> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { step: 0, m: vec![T::zero(); len], v: vec![T::zero(); len], config })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Element>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    for len in [params.len(), grads.len()] {
        if len != state.m.len() {
            return Err(TensorError::LengthMismatch { expected: state.m.len(), actual: len });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = m.to_f64_lossy() / bc1;
        let v_hat = v.to_f64_lossy() / bc2;
        *p -= T::from_f64_lossy(lr * m_hat / (v_hat.sqrt() + eps));
    }
    Ok(())
}
