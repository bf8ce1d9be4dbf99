use crate::error::Result;
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{Element, Tensor};

pub(crate) fn relu_backward<T: Element>(x: &[T], dy: &[T], input: Var, grads: &mut Grads<'_, T>) {
    if !grads.wants(input) {
        return;
    }
    let dx = grads.slot(input);
    for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(x) {
        if v > T::zero() {
            *d += g;
        }
    }
}

impl<T: Element> Graph<T> {
    /// Elementwise `max(0, x)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::Relu { input }, &[input]))
    }
}
