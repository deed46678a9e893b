//! Tape-based reverse-mode differentiation.
//!
//! Every operation pushes a [`Node`] holding its forward value and enough
//! saved state to run its adjoint. [`Tape::backward`] walks the tape in
//! reverse and accumulates gradients for every leaf that requires them.

use crate::error::{AutogradError, Result};
use crate::ops::{conv, elementwise, linalg, loss, norm, shape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// Adds or multiplies a constant tensor; only the mul variant needs it stored.
    AddConst(Var),
    MulConst(Var, Vec<T>),
    /// Broadcast of a per-channel vector over `(outer, ch, inner)`.
    BiasAdd {
        x: Var,
        bias: Var,
        dims: (usize, usize, usize),
    },
    BiasMul {
        x: Var,
        scale: Var,
        dims: (usize, usize, usize),
    },
    MatMul(linalg::MatMulSpec),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Narrow {
        x: Var,
        dims: (usize, usize, usize),
        start: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Conv1d(conv::Conv1dSpec),
    Conv2d(conv::Conv2dSpec),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample1d {
        x: Var,
        factor: usize,
    },
    Standardize(norm::StandardizeSpec<T>),
    Sum(Var),
    Mean(Var),
    Bce(loss::BceSpec<T>),
    CcLoss(loss::CcSpec<T>),
    CrossEntropy(loss::CrossEntropySpec<T>),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Scale(x, _)
            | AddConst(x)
            | MulConst(x, _)
            | Reshape(x)
            | Permute { x, .. }
            | Narrow { x, .. }
            | Relu(x)
            | LeakyRelu(x, _)
            | Sigmoid(x)
            | Tanh(x)
            | Softmax(x)
            | MaxPool { x, .. }
            | Upsample1d { x, .. }
            | Sum(x)
            | Mean(x) => vec![*x],
            BiasAdd { x, bias, .. } => vec![*x, *bias],
            BiasMul { x, scale, .. } => vec![*x, *scale],
            MatMul(s) => vec![s.a, s.b],
            Concat { parts, .. } => parts.iter().map(|(v, _)| *v).collect(),
            Conv1d(s) => s.parents(),
            Conv2d(s) => s.parents(),
            Standardize(s) => vec![s.x],
            Bce(s) => vec![s.pred],
            CcLoss(s) => vec![s.pred],
            CrossEntropy(s) => vec![s.logits],
        }
    }
}

/// Recording of a forward computation.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are reported for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        // Drop saved state for subgraphs that can never receive a gradient.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass seeded with ones; `output` is normally a scalar loss.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let seed = vec![T::one(); self.value(output).numel()];
        self.backward_with(output, seed)
    }

    /// Reverse pass seeded with an explicit output adjoint.
    pub fn backward_with(&self, output: Var, seed: Vec<T>) -> Result<Gradients<T>> {
        if seed.len() != self.value(output).numel() {
            return Err(AutogradError::Shape(format!(
                "seed of length {} for output with {} elements",
                seed.len(),
                self.value(output).numel()
            )));
        }
        let mut sink = GradSink {
            grads: (0..=output.0).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        sink.grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                sink.grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = sink.grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut sink);
        }
        let grads = sink
            .grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], sink: &mut GradSink<'_, T>) {
        use Op::*;
        let out = node.value.data();
        match &node.op {
            Leaf => {}
            Add(a, b) => {
                sink.add(*a, g);
                sink.add(*b, g);
            }
            Sub(a, b) => {
                sink.add(*a, g);
                sink.with(*b, |buf| {
                    for (d, &gi) in buf.iter_mut().zip(g) {
                        *d -= gi;
                    }
                });
            }
            Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                sink.with(*a, |buf| {
                    for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                });
                sink.with(*b, |buf| {
                    for ((d, &gi), &x) in buf.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                });
            }
            Scale(x, c) => sink.with(*x, |buf| {
                for (d, &gi) in buf.iter_mut().zip(g) {
                    *d += gi * *c;
                }
            }),
            AddConst(x) | Reshape(x) => sink.add(*x, g),
            MulConst(x, c) => sink.with(*x, |buf| {
                for ((d, &gi), &ci) in buf.iter_mut().zip(g).zip(c) {
                    *d += gi * ci;
                }
            }),
            BiasAdd { x, bias, dims } => {
                sink.add(*x, g);
                sink.with(*bias, |buf| elementwise::reduce_to_channels(g, *dims, buf));
            }
            BiasMul { x, scale, dims } => {
                let xv = self.value(*x).data();
                let sv = self.value(*scale).data();
                elementwise::bias_mul_backward(g, xv, sv, *dims, *x, *scale, sink);
            }
            MatMul(spec) => linalg::matmul_backward(self, spec, g, sink),
            Permute { x, perm } => {
                let back = shape::inverse_perm(perm);
                let data = shape::permute_data(g, node.value.shape(), &back);
                sink.add(*x, &data);
            }
            Narrow { x, dims, start } => sink.with(*x, |buf| {
                shape::narrow_backward(g, *dims, *start, node.value.shape(), buf)
            }),
            Concat {
                parts,
                outer,
                inner,
            } => shape::concat_backward(g, parts, *outer, *inner, sink),
            Relu(x) => sink.with(*x, |buf| {
                for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *d += gi;
                    }
                }
            }),
            LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                sink.with(*x, |buf| {
                    for ((d, &gi), &xi) in buf.iter_mut().zip(g).zip(xv) {
                        *d += if xi > T::zero() { gi } else { gi * *slope };
                    }
                })
            }
            Sigmoid(x) => sink.with(*x, |buf| {
                for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(out) {
                    *d += gi * y * (T::one() - y);
                }
            }),
            Tanh(x) => sink.with(*x, |buf| {
                for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(out) {
                    *d += gi * (T::one() - y * y);
                }
            }),
            Softmax(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                sink.with(*x, |buf| elementwise::softmax_backward(g, out, n, buf))
            }
            Conv1d(spec) => conv::conv1d_backward(self, spec, g, sink),
            Conv2d(spec) => conv::conv2d_backward(self, spec, g, sink),
            MaxPool { x, argmax } => sink.with(*x, |buf| {
                for (&gi, &src) in g.iter().zip(argmax) {
                    buf[src] += gi;
                }
            }),
            Upsample1d { x, factor } => sink.with(*x, |buf| {
                for (i, d) in buf.iter_mut().enumerate() {
                    for r in 0..*factor {
                        *d += g[i * factor + r];
                    }
                }
            }),
            Standardize(spec) => sink.with(spec.x, |buf| norm::standardize_backward(spec, g, buf)),
            Sum(x) => sink.with(*x, |buf| {
                for d in buf.iter_mut() {
                    *d += g[0];
                }
            }),
            Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                sink.with(*x, |buf| {
                    for d in buf.iter_mut() {
                        *d += g[0] / n;
                    }
                })
            }
            Bce(spec) => sink.with(spec.pred, |buf| loss::bce_backward(self, spec, g[0], buf)),
            CcLoss(spec) => sink.with(spec.pred, |buf| loss::cc_backward(spec, g[0], buf)),
            CrossEntropy(spec) => {
                sink.with(spec.logits, |buf| loss::cross_entropy_backward(spec, g[0], buf))
            }
        }
    }
}

/// Gradient accumulator used during the reverse pass.
pub(crate) struct GradSink<'a, T> {
    grads: Vec<Option<Vec<T>>>,
    nodes: &'a [Node<T>],
}

impl<T: Scalar> GradSink<'_, T> {
    pub(crate) fn with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => {
                for (d, &gi) in buf.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

/// Gradients of every leaf that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
