//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and whatever the adjoint needs. Nodes are appended in evaluation order,
//! so walking the tape backwards from the loss visits every node after all
//! of its consumers, and gradients of values used more than once simply
//! accumulate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, Broadcast, ConvGeom, NormCache, PoolMode};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, arg: Vec<usize> },
    GlobalPool { x: Var, mode: PoolMode, arg: Vec<usize> },
    Norm { x: Var, gamma: Var, beta: Var, cache: NormCache<T> },
    Relu(Var),
    Sigmoid(Var),
    Add { a: Var, b: Var, kind: Broadcast },
    Mul { a: Var, b: Var, kind: Broadcast },
    Concat(Vec<Var>),
    Softmax(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel moments of a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf; gradients are kept for it after [`Graph::backward`] when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf that requires gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass; interior nodes release theirs.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv { x, w, b, geom }, rg))
    }

    /// Kernel layout `[in, out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let value = ops::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::ConvT { x, w, b, geom }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        let (value, arg) = ops::maxpool2d(self.value(x), k, s)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { x, arg }, rg))
    }

    pub fn global_pool(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let (value, arg) = ops::global_pool(self.value(x), mode)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalPool { x, mode, arg }, rg))
    }

    /// Training-mode batch norm: normalizes with the batch's own moments and
    /// returns them so the caller can update running statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Moments<T>)> {
        let (mean, var) = ops::channel_moments(self.value(x));
        let (value, cache) =
            ops::normalize(self.value(x), self.value(gamma).data(), self.value(beta).data(), &mean, &var, eps, true)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok((self.push(value, Op::Norm { x, gamma, beta, cache }, rg), Moments { mean, var }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (value, cache) =
            ops::normalize(self.value(x), self.value(gamma).data(), self.value(beta).data(), mean, var, eps, false)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(value, Op::Norm { x, gamma, beta, cache }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// `a + b`; `b` may be `[1, C, 1, 1]` or `[N, C, 1, 1]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind(self.shape(a), self.shape(b))?;
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b, kind }, rg))
    }

    /// `a ⊙ b`; `b` may be `[1, C, 1, 1]` or `[N, C, 1, 1]`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind(self.shape(a), self.shape(b))?;
        let value = ops::mul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b, kind }, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let value = ops::softmax_channels(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Sum of all elements as a `[1, 1, 1, 1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean pixel cross-entropy of `logits [N, K, H, W]` against `labels`
    /// (`N·H·W` class indices, row-major), via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k, h, w] = self.value(logits).dims();
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(shape_err!("{} labels for logits {:?}", labels.len(), self.shape(logits)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { value: bad, classes: k });
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); src.len()];
        let mut total = T::zero();
        for b in 0..n {
            for p in 0..plane {
                let idx = |ch: usize| (b * k + ch) * plane + p;
                let m = (0..k).map(|ch| src[idx(ch)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for ch in 0..k {
                    let e = (src[idx(ch)] - m).exp();
                    probs[idx(ch)] = e;
                    z += e;
                }
                for ch in 0..k {
                    probs[idx(ch)] /= z;
                }
                let label = labels[b * plane + p];
                total += m + z.ln() - src[idx(label)];
            }
        }
        let count = T::lit((n * plane).max(1) as f64);
        let value = Tensor::scalar(total / count);
        let rg = self.rg(logits);
        Ok(self.push(value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_vec(&mut self, v: Var, g: Vec<T>) {
        let shape = self.shape(v);
        self.accumulate(v, Tensor::from_vec(shape, g).expect("adjoint matches value shape"));
    }

    /// Reduces a full-shape gradient onto a broadcast operand's shape.
    fn reduce_broadcast(g: &Tensor<T>, kind: Broadcast, target: Shape) -> Tensor<T> {
        if kind == Broadcast::Exact {
            return g.clone();
        }
        let shape = g.shape();
        let mut out = Tensor::zeros(target);
        let od = out.data_mut();
        for (i, &v) in g.data().iter().enumerate() {
            od[ops::bcast_index(kind, shape, i)] += v;
        }
        out
    }

    /// Propagates d`loss`/d(node) to every node that requires gradients.
    /// Leaves keep their gradients; interior buffers are released as soon as
    /// they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.accumulate(loss, Tensor::full(Shape::scalar(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g)?;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // Temporarily move the op out so parent values can be borrowed alongside it.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let grads = ops::conv2d_backward(self.value(x), self.value(w), geom, g, self.rg(x))?;
                if let Some(dx) = grads.x {
                    self.accumulate(x, dx);
                }
                self.accumulate(w, grads.kernel);
                if let Some(b) = b {
                    self.accumulate_vec(b, grads.bias);
                }
            }
            Op::ConvT { x, w, b, geom } => {
                let grads = ops::conv_transpose2d_backward(self.value(x), self.value(w), geom, g, self.rg(x))?;
                if let Some(dx) = grads.x {
                    self.accumulate(x, dx);
                }
                self.accumulate(w, grads.kernel);
                if let Some(b) = b {
                    self.accumulate_vec(b, grads.bias);
                }
            }
            Op::MaxPool { x, ref arg } | Op::GlobalPool { x, mode: PoolMode::Max, ref arg } => {
                let dx = ops::scatter_argmax(self.shape(x), arg, g.data());
                self.accumulate(x, dx);
            }
            Op::GlobalPool { x, mode: PoolMode::Avg, .. } => {
                let shape = self.shape(x);
                let plane = shape.plane();
                let scale = T::lit(plane as f64).recip();
                let mut dx = Tensor::zeros(shape);
                for (chunk, &gv) in dx.data_mut().chunks_mut(plane).zip(g.data()) {
                    chunk.fill(gv * scale);
                }
                self.accumulate(x, dx);
            }
            Op::Norm { x, gamma, beta, ref cache } => {
                let dims = self.value(x).dims();
                let (dx, dgamma, dbeta) = ops::normalize_backward(dims, self.value(gamma).data(), cache, g.data());
                self.accumulate_vec(x, dx);
                self.accumulate_vec(gamma, dgamma);
                self.accumulate_vec(beta, dbeta);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate_vec(x, dx);
            }
            Op::Sigmoid(x) => {
                let dx =
                    self.nodes[i].value.data().iter().zip(g.data()).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                self.accumulate_vec(x, dx);
            }
            Op::Add { a, b, kind } => {
                let db = Self::reduce_broadcast(g, kind, self.shape(b));
                self.accumulate(a, g.clone());
                self.accumulate(b, db);
            }
            Op::Mul { a, b, kind } => {
                let shape = self.shape(a);
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let da: Vec<T> =
                    g.data().iter().enumerate().map(|(j, &gv)| gv * bv[ops::bcast_index(kind, shape, j)]).collect();
                let full_db = Tensor::from_vec(shape, g.data().iter().zip(av).map(|(&gv, &x)| gv * x).collect())?;
                let db = Self::reduce_broadcast(&full_db, kind, self.shape(b));
                self.accumulate_vec(a, da);
                self.accumulate(b, db);
            }
            Op::Concat(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p).c();
                    let slice = g.slice_channels(start, c)?;
                    self.accumulate(p, slice);
                    start += c;
                }
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let [n, c, h, w] = y.dims();
                let plane = h * w;
                let mut dx = vec![T::zero(); y.numel()];
                for b in 0..n {
                    for p in 0..plane {
                        let idx = |ch: usize| (b * c + ch) * plane + p;
                        let dot: T = (0..c).map(|ch| g.data()[idx(ch)] * y.data()[idx(ch)]).sum();
                        for ch in 0..c {
                            dx[idx(ch)] = y.data()[idx(ch)] * (g.data()[idx(ch)] - dot);
                        }
                    }
                }
                self.accumulate_vec(x, dx);
            }
            Op::Sum(x) => {
                let shape = self.shape(x);
                self.accumulate(x, Tensor::full(shape, g.data()[0]));
            }
            Op::CrossEntropy { logits, ref labels, ref probs } => {
                let [n, k, h, w] = self.value(logits).dims();
                let plane = h * w;
                let scale = g.data()[0] / T::lit((n * plane).max(1) as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for b in 0..n {
                    for p in 0..plane {
                        let label = labels[b * plane + p];
                        dx[(b * k + label) * plane + p] -= scale;
                    }
                }
                self.accumulate_vec(logits, dx);
            }
        }
        Ok(())
    }
}
