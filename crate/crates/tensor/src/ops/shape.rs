use crate::error::{shape_err, Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{Element, Tensor};

pub(crate) fn concat_backward<T: Element>(
    a_shape: &[usize],
    b_shape: &[usize],
    dy: &[T],
    a: Var,
    b: Var,
    grads: &mut Grads<'_, T>,
) {
    let n = a_shape[0];
    let s: usize = a_shape[2..].iter().product();
    let (la, lb) = (a_shape[1] * s, b_shape[1] * s);
    for (v, off, len) in [(a, 0, la), (b, la, lb)] {
        if !grads.wants(v) {
            continue;
        }
        let dx = grads.slot(v);
        for i in 0..n {
            let src = &dy[i * (la + lb) + off..i * (la + lb) + off + len];
            dx[i * len..(i + 1) * len].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
        }
    }
}

pub(crate) fn weighted_sum_backward<T: Element>(weights: Option<&[T]>, dy: &[T], input: Var, grads: &mut Grads<'_, T>) {
    if !grads.wants(input) {
        return;
    }
    let g = dy[0];
    let dx = grads.slot(input);
    match weights {
        Some(w) => dx.iter_mut().zip(w).for_each(|(d, &wi)| *d += g * wi),
        None => dx.iter_mut().for_each(|d| *d += g),
    }
}

impl<T: Element> Graph<T> {
    /// Concatenates `[N,Ca,...]` and `[N,Cb,...]` along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return shape_err(format!("cannot concat {sa:?} and {sb:?} along channels"));
        }
        if sa[1] == 0 || sb[1] == 0 {
            return shape_err("concat operands need at least one channel");
        }
        let s: usize = sa[2..].iter().product();
        let (la, lb) = (sa[1] * s, sb[1] * s);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for i in 0..sa[0] {
            out.extend_from_slice(&xa[i * la..(i + 1) * la]);
            out.extend_from_slice(&xb[i * lb..(i + 1) * lb]);
        }
        let mut shape = sa;
        shape[1] += sb[1];
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        let value = Tensor::from_parts(vec![1], vec![total]);
        self.push(value, Op::WeightedSum { input, weights: None }, &[input])
    }

    /// `Σ wᵢ xᵢ` as a `[1]` tensor; handy for probing gradients with a
    /// non-uniform upstream signal.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let x = self.value(input).data();
        if weights.len() != x.len() {
            return Err(TensorError::LengthMismatch { expected: x.len(), actual: weights.len() });
        }
        let total = x.iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let value = Tensor::from_parts(vec![1], vec![total]);
        Ok(self.push(value, Op::WeightedSum { input, weights: Some(weights.to_vec()) }, &[input]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_puts_a_first_and_splits_gradient() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::filled(&[1, 2, 1, 1, 2], 1.0).unwrap());
        let b = g.leaf(Tensor::filled(&[1, 3, 1, 1, 2], 2.0).unwrap());
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), &[1, 5, 1, 1, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert!(g.grad(a).unwrap().iter().all(|&v| v == 1.0));
        assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros(&[1, 2, 2, 2, 2]).unwrap());
        let b = g.leaf(Tensor::zeros(&[1, 2, 2, 2, 3]).unwrap());
        assert!(g.concat_channels(a, b).is_err());
        let c = g.leaf(Tensor::zeros(&[2, 2, 2, 2, 2]).unwrap());
        assert!(g.concat_channels(a, c).is_err());
    }
}
