use crate::error::{shape_err, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{gemm, Element, MatView, Tensor};

pub(crate) fn dense_backward<T: Element>(
    x_shape: &[usize],
    x: &[T],
    w_shape: &[usize],
    w: &[T],
    dy: &[T],
    [input, weight, bias]: [Var; 3],
    grads: &mut Grads<'_, T>,
) {
    let (n, f, o) = (x_shape[0], x_shape[1], w_shape[1]);
    if grads.wants(input) {
        let dx = grads.slot(input);
        gemm(T::one(), MatView::row_major(dy, n, o), MatView::transposed(w, f, o), T::one(), dx);
    }
    if grads.wants(weight) {
        let dw = grads.slot(weight);
        gemm(T::one(), MatView::transposed(x, n, f), MatView::row_major(dy, n, o), T::one(), dw);
    }
    if grads.wants(bias) {
        let db = grads.slot(bias);
        for row in dy.chunks(o) {
            db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
    }
}

impl<T: Element> Graph<T> {
    /// Affine map `x·W + b` with `x [N,F]`, `W [F,O]`, `b [O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, f] = self.value(input).dims2()?;
        let [wf, o] = self.value(weight).dims2()?;
        if wf != f || self.shape(bias) != [o] {
            return shape_err(format!(
                "dense: input [{n},{f}], weight {:?}, bias {:?}",
                self.shape(weight),
                self.shape(bias)
            ));
        }
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            T::one(),
            MatView::row_major(self.value(input).data(), n, f),
            MatView::row_major(self.value(weight).data(), f, o),
            T::one(),
            &mut out,
        );
        let value = Tensor::from_parts(vec![n, o], out);
        Ok(self.push(value, Op::Dense { input, weight, bias }, &[input, weight, bias]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_through() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap());
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        let w = g.leaf(Tensor::new(&[3, 3], eye).unwrap());
        let b = g.leaf(Tensor::zeros(&[3]).unwrap());
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn zero_weight_yields_bias_rows() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::filled(&[4, 5], 7.0).unwrap());
        let w = g.leaf(Tensor::zeros(&[5, 2]).unwrap());
        let b = g.leaf(Tensor::new(&[2], vec![0.25, -1.5]).unwrap());
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 2]);
        for row in g.value(y).data().chunks(2) {
            assert_eq!(row, &[0.25, -1.5]);
        }
        let bad = g.leaf(Tensor::zeros(&[4, 2]).unwrap());
        assert!(g.dense(x, bad, b).is_err());
    }
}
