use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::Var;
use crate::ops::ConvGeom;
use crate::params::{ParamId, ParamKind, ParamStore, Session, StatUpdate};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiming-uniform fan-in initialization: `U(−b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(dims: [usize; 4], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = num_traits::Float::sqrt(6.0 / fan_in.max(1) as f64);
    Tensor::uniform(dims, -bound, bound, rng)
}

/// Plain 2-D convolution, kernel `[out, in, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        geom: ConvGeom,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let w = kaiming_uniform([out_channels, in_channels, kh, kw], in_channels * kh * kw, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable)?;
        let bias = if with_bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1]), ParamKind::Trainable)?)
        } else {
            None
        };
        Ok(Conv { weight, bias, geom, in_channels, out_channels, kernel })
    }

    /// 1×1 convolution with bias.
    pub fn pointwise<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, in_channels, out_channels, (1, 1), ConvGeom::unit(), true, rng)
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = self.bias.map(|b| sess.param(b));
        sess.graph.conv2d(x, w, b, self.geom)
    }

    /// Multiply-accumulates for an output of `out_h × out_w` (per sample).
    pub fn macs(&self, out_h: usize, out_w: usize) -> u64 {
        (self.in_channels * self.out_channels * self.kernel.0 * self.kernel.1 * out_h * out_w) as u64
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(b);
        }
    }
}

/// Transposed convolution with kernel = stride, an exact `factor×` upsampler.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
    pub factor: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Upsample {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        factor: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = kaiming_uniform([in_channels, out_channels, factor, factor], out_channels * factor * factor, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Trainable)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1]), ParamKind::Trainable)?;
        Ok(Upsample { weight, bias, factor, in_channels, out_channels })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        sess.graph.conv_transpose2d(x, w, Some(b), ConvGeom::new(self.factor, (0, 0)))
    }

    /// Multiply-accumulates for an input of `in_h × in_w`.
    pub fn macs(&self, in_h: usize, in_w: usize) -> u64 {
        (self.in_channels * self.out_channels * self.factor * self.factor * in_h * in_w) as u64
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let shape = [1, channels, 1, 1];
        Ok(BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, T::one()), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(shape), ParamKind::Buffer)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(shape, T::one()), ParamKind::Buffer)?,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            channels,
        })
    }

    /// Batch statistics in training mode (recording a running-stat update),
    /// running statistics otherwise.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = sess.param(self.gamma);
        let beta = sess.param(self.beta);
        let eps = T::lit(self.eps);
        if sess.training() {
            let (y, moments) = sess.graph.batch_norm_train(x, gamma, beta, eps)?;
            sess.record_stats(StatUpdate {
                mean: self.running_mean,
                var: self.running_var,
                momentum: self.momentum,
                moments,
            });
            Ok(y)
        } else {
            let store = sess.store();
            let mean = store.get(self.running_mean).data();
            let var = store.get(self.running_var).data();
            sess.graph.batch_norm_eval(x, gamma, beta, mean, var, eps)
        }
    }

    /// Inference-time per-channel `(scale, shift)` with `y = scale·x + shift`.
    pub fn inference_affine<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(Vec<T>, Vec<T>)> {
        let gamma = store.get(self.gamma).data();
        let beta = store.get(self.beta).data();
        let mean = store.get(self.running_mean).data();
        let var = store.get(self.running_var).data();
        let eps = T::lit(self.eps);
        let mut scale = Vec::with_capacity(self.channels);
        let mut shift = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let denom = var[c] + eps;
            if !mean[c].is_finite() || !denom.is_finite() || denom <= T::zero() {
                return Err(crate::Error::BadStatistics(format!(
                    "channel {c}: running mean {} var {}",
                    mean[c], var[c]
                )));
            }
            let s = gamma[c] / denom.sqrt();
            scale.push(s);
            shift.push(beta[c] - s * mean[c]);
        }
        Ok((scale, shift))
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
