//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op in evaluation order. Nodes are only ever
//! appended, so the node index is already a topological order and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::ops::conv::ConvGeometry;
use crate::tensor::{Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv3d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu { input: Var },
    AvgPool3d { input: Var, window: usize, stride: usize },
    GlobalAvgPool { input: Var },
    Dense { input: Var, weight: Var, bias: Var },
    Softmax { input: Var },
    CrossEntropy { probs: Var, targets: Vec<usize> },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Concat { a: Var, b: Var },
    WeightedSum { input: Var, weights: Option<Vec<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient accumulators indexed by node.
pub(crate) struct Grads<'g, T> {
    slots: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
    lens: Vec<usize>,
    _graph: std::marker::PhantomData<&'g ()>,
}

impl<T: Element> Grads<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Zero-initialised on first touch; ops accumulate with `+=`.
    pub fn slot(&mut self, v: Var) -> &mut [T] {
        let len = self.lens[v.0];
        self.slots[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn add(&mut self, v: Var, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.lens[v.0]);
        match &mut self.slots[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Recording of a computation whose gradient can be taken.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: receives a gradient on `backward`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires)
    }

    /// Back-propagates from a scalar `loss`, storing gradients on every node
    /// that requires one. Previous gradients are replaced.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            requires: self.nodes.iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
            _graph: std::marker::PhantomData,
        };
        let mut finished: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads.slots[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(upstream) = grads.slots[i].take() else { continue };
            self.backward_node(i, &upstream, &mut grads);
            finished[i] = Some(upstream);
        }
        for (node, g) in self.nodes.iter_mut().zip(finished) {
            node.value.set_grad(g)?;
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, dy: &[T], grads: &mut Grads<'_, T>) {
        use crate::ops::*;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { input, weight, bias, geom } => {
                conv::backward(val(*input), val(*weight), dy, geom, *input, *weight, *bias, grads)
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                let shape = self.shape(*input);
                norm::backward(shape, val(*gamma), xhat, inv_std, *train, dy, *input, *gamma, *beta, grads)
            }
            Op::Relu { input } => activation::relu_backward(val(*input), dy, *input, grads),
            Op::AvgPool3d { input, window, stride } => {
                pool::avg_backward(self.shape(*input), *window, *stride, dy, *input, grads)
            }
            Op::GlobalAvgPool { input } => pool::gap_backward(self.shape(*input), dy, *input, grads),
            Op::Dense { input, weight, bias } => {
                linear::dense_backward(self.shape(*input), val(*input), self.shape(*weight), val(*weight), dy, [*input, *weight, *bias], grads)
            }
            Op::Softmax { input } => {
                loss::softmax_backward(self.shape(*input), self.nodes[i].value.data(), dy, *input, grads)
            }
            Op::CrossEntropy { probs, targets } => {
                loss::cross_entropy_backward(self.shape(*probs), val(*probs), targets, dy, *probs, grads)
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                loss::softmax_ce_backward(self.shape(*logits), probs, targets, dy, *logits, grads)
            }
            Op::Concat { a, b } => shape::concat_backward(self.shape(*a), self.shape(*b), dy, *a, *b, grads),
            Op::WeightedSum { input, weights } => shape::weighted_sum_backward(weights.as_deref(), dy, *input, grads),
        }
    }
}
