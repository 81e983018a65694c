//! Named parameter storage and the per-forward binding of parameters onto a graph.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Moments, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Non-trainable state such as running batch-norm statistics.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(alloc::format!("duplicate parameter name `{name}`")));
        }
        self.entries.push(ParamEntry { name, tensor, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        self.find(name).map(|id| self.get(id)).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Scalar count over trainable arrays.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.tensor.numel()).sum()
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        for u in updates {
            let m = T::lit(u.momentum);
            let keep = T::one() - m;
            for (r, &b) in self.get_mut(u.mean).data_mut().iter_mut().zip(&u.moments.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.get_mut(u.var).data_mut().iter_mut().zip(&u.moments.var) {
                *r = keep * *r + m * b;
            }
        }
    }
}

/// Batch moments observed by one training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub momentum: f64,
    pub moments: Moments<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward evaluation: a fresh graph, lazily bound parameters and the
/// running-statistic updates collected along the way.
pub struct Session<'s, T> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_grads: bool,
    stats: Vec<StatUpdate<T>>,
}

impl<'s, T: Scalar> Session<'s, T> {
    /// Parameters require gradients in training mode only.
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self::with_grads(store, mode, mode == Mode::Train)
    }

    pub fn with_grads(store: &'s ParamStore<T>, mode: Mode, track_grads: bool) -> Self {
        Session { graph: Graph::new(), store, bound: vec![None; store.len()], mode, track_grads, stats: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph handle for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let rg = self.track_grads && self.store.kind(id) == ParamKind::Trainable;
        let v = self.graph.leaf(self.store.get(id).clone(), rg);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.graph.input(x)
    }

    pub fn record_stats(&mut self, update: StatUpdate<T>) {
        self.stats.push(update);
    }

    pub fn stat_updates(&self) -> &[StatUpdate<T>] {
        &self.stats
    }

    /// Gradient per parameter id after `graph.backward`; `None` for
    /// parameters that were never bound or do not require gradients.
    pub fn gradients(&self) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|b| b.and_then(|v| self.graph.grad(v).cloned())).collect()
    }

    /// Like [`Session::gradients`] but moves the gradients out of the graph.
    pub fn take_gradients(&mut self) -> Vec<Option<Tensor<T>>> {
        let bound = core::mem::take(&mut self.bound);
        let grads = bound.iter().map(|b| b.and_then(|v| self.graph.take_grad(v))).collect();
        self.bound = bound;
        grads
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate<T>> {
        self.stats
    }
}
