//! Per-channel batch normalization kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything backward needs from a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    /// `(x - mean) * inv_std`.
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Whether the statistics came from the batch (training) or were fixed.
    pub batch_stats: bool,
}

/// Batch mean and population variance per channel over `N·H·W`.
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let count = T::lit((n * plane) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for (ch, m) in mean.iter_mut().enumerate() {
            let base = (b * c + ch) * plane;
            *m += x.data()[base..base + plane].iter().copied().sum::<T>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let m = mean[ch];
            var[ch] += x.data()[base..base + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

/// `gamma · (x − mean) / sqrt(var + eps) + beta`, per channel.
pub fn normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    batch_stats: bool,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let [n, c, h, w] = x.dims();
    for (what, len) in [("gamma", gamma.len()), ("beta", beta.len()), ("mean", mean.len()), ("var", var.len())] {
        if len != c {
            return Err(shape_err!("batchnorm: {what} has {len} entries for {c} channels"));
        }
    }
    if eps < T::zero() {
        return Err(Error::BadStatistics(alloc::format!("negative eps {eps}")));
    }
    let mut inv_std = Vec::with_capacity(c);
    for (ch, &v) in var.iter().enumerate() {
        let denom = v + eps;
        if !denom.is_finite() || denom <= T::zero() || !mean[ch].is_finite() {
            return Err(Error::BadStatistics(alloc::format!("channel {ch}: var + eps = {denom}")));
        }
        inv_std.push(denom.sqrt().recip());
    }
    let plane = h * w;
    let mut xhat = Vec::with_capacity(x.numel());
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for &v in &x.data()[base..base + plane] {
                let xh = (v - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(gamma[ch] * xh + beta[ch]);
            }
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, NormCache { xhat, inv_std, batch_stats }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn normalize_backward<T: Scalar>(
    dims: [usize; 4],
    gamma: &[T],
    cache: &NormCache<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let m = T::lit((n * plane) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for (&g, &xh) in dy[base..base + plane].iter().zip(&cache.xhat[base..base + plane]) {
                dbeta[ch] += g;
                dgamma[ch] += g * xh;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let k = gamma[ch] * cache.inv_std[ch];
            if cache.batch_stats {
                let mean_dy = dbeta[ch] / m;
                let mean_dy_xhat = dgamma[ch] / m;
                for i in base..base + plane {
                    dx[i] = k * (dy[i] - mean_dy - cache.xhat[i] * mean_dy_xhat);
                }
            } else {
                for i in base..base + plane {
                    dx[i] = k * dy[i];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
