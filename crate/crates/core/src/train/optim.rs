use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments per parameter id; buffers keep empty slots.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |_| None;
        let m: Vec<_> = (0..store.len()).map(zeros).collect();
        OptimState { config, t: 0, v: m.clone(), m }
    }

    pub fn first_moment(&self, index: usize) -> Option<&Tensor<T>> {
        self.m.get(index).and_then(Option::as_ref)
    }

    pub fn second_moment(&self, index: usize) -> Option<&Tensor<T>> {
        self.v.get(index).and_then(Option::as_ref)
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·t/T))`.
pub fn cosine_lr(lr0: f64, t: u64, total: u64, lr_min: f64) -> f64 {
    let total = total.max(1);
    let t = t.min(total);
    let phase = core::f64::consts::PI * t as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + num_traits::Float::cos(phase))
}

/// One Adam update of every trainable parameter. `grads` is indexed by
/// parameter id. Nothing is modified unless every gradient is present and finite.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    let trainable: Vec<_> = store.ids().filter(|&id| store.kind(id) == ParamKind::Trainable).collect();
    for &id in &trainable {
        let name = || store.name(id).to_string();
        let g =
            grads.get(id.index()).and_then(Option::as_ref).ok_or_else(|| Error::MissingGradient { param: name() })?;
        if g.shape() != store.get(id).shape() {
            return Err(crate::error::shape_err!("gradient of `{}` has shape {:?}", name(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { param: name() });
        }
    }
    if state.m.len() != store.len() {
        return Err(Error::Config("optimizer state was built for a different parameter set".into()));
    }

    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = T::lit(1.0 - num_traits::Float::powi(beta1, t));
    let c2 = T::lit(1.0 - num_traits::Float::powi(beta2, t));
    let (b1, b2, eps, lr) = (T::lit(beta1), T::lit(beta2), T::lit(eps), T::lit(lr));
    let one = T::one();
    for id in trainable {
        let g = grads[id.index()].as_ref().expect("checked above");
        let shape = g.shape();
        let m = state.m[id.index()].get_or_insert_with(|| Tensor::zeros(shape));
        let v = state.v[id.index()].get_or_insert_with(|| Tensor::zeros(shape));
        let theta = store.get_mut(id);
        for (((p, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
