use alloc::format;

use rand::Rng;

use super::layers::Conv;
use crate::error::{shape_err, Result};
use crate::graph::Var;
use crate::ops::PoolMode;
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;

pub const DEFAULT_REDUCTION: usize = 16;

/// Channel attention block.
///
/// A 1×1 convolution first reduces the concatenated input to `channels`
/// feature maps `F′`. Global average and global max pooling of `F′` each go
/// through their own bottleneck (1×1 compress by `ratio`, ReLU, 1×1 restore);
/// the two results are summed and squashed by a sigmoid into per-channel
/// weights `W_c ∈ (0, 1)`, and the output is `W_c ⊙ F′`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention {
    pub reduce: Conv,
    pub compress_avg: Conv,
    pub compress_max: Conv,
    pub restore_avg: Conv,
    pub restore_max: Conv,
    pub ratio: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        channels: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(crate::Error::Config(format!(
                "attention width {channels} is not divisible by reduction ratio {ratio}"
            )));
        }
        let hidden = channels / ratio;
        Ok(ChannelAttention {
            reduce: Conv::pointwise(store, &format!("{name}.reduce"), in_channels, channels, rng)?,
            compress_avg: Conv::pointwise(store, &format!("{name}.compress_avg"), channels, hidden, rng)?,
            compress_max: Conv::pointwise(store, &format!("{name}.compress_max"), channels, hidden, rng)?,
            restore_avg: Conv::pointwise(store, &format!("{name}.restore_avg"), hidden, channels, rng)?,
            restore_max: Conv::pointwise(store, &format!("{name}.restore_max"), hidden, channels, rng)?,
            ratio,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.reduce.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.reduce.out_channels
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, f_cat: Var) -> Result<Var> {
        Ok(self.forward_with_weights(sess, f_cat)?.0)
    }

    /// Returns `(W_c ⊙ F′, W_c)` with `W_c` shaped `[N, C, 1, 1]`.
    pub fn forward_with_weights<T: Scalar>(&self, sess: &mut Session<'_, T>, f_cat: Var) -> Result<(Var, Var)> {
        let c = sess.graph.shape(f_cat).c();
        if c != self.in_channels() {
            return Err(shape_err!("attention block expects {} channels, got {c}", self.in_channels()));
        }
        let features = self.reduce.forward(sess, f_cat)?;
        let avg = sess.graph.global_pool(features, PoolMode::Avg)?;
        let max = sess.graph.global_pool(features, PoolMode::Max)?;
        let a = self.bottleneck(sess, avg, &self.compress_avg, &self.restore_avg)?;
        let m = self.bottleneck(sess, max, &self.compress_max, &self.restore_max)?;
        let logits = sess.graph.add(a, m)?;
        let weights = sess.graph.sigmoid(logits);
        let out = sess.graph.mul(features, weights)?;
        Ok((out, weights))
    }

    fn bottleneck<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, compress: &Conv, restore: &Conv) -> Result<Var> {
        let h = compress.forward(sess, x)?;
        let h = sess.graph.relu(h);
        restore.forward(sess, h)
    }

    /// Multiply-accumulates at feature resolution `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.reduce.macs(h, w)
            + [&self.compress_avg, &self.compress_max, &self.restore_avg, &self.restore_max]
                .iter()
                .map(|c| c.macs(1, 1))
                .sum::<u64>()
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        for c in [
            &mut self.reduce,
            &mut self.compress_avg,
            &mut self.compress_max,
            &mut self.restore_avg,
            &mut self.restore_max,
        ] {
            c.visit_ids(f);
        }
    }
}
