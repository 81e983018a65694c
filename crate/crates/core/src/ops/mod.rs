//! Value-level kernels. The autodiff graph in [`crate::graph`] records calls
//! to these and pairs each with its adjoint.

mod conv;
mod norm;
mod pool;

pub use conv::{
    conv2d, conv2d_backward, conv2d_shape, conv_transpose2d, conv_transpose2d_backward, conv_transpose2d_shape,
    ConvGeom, ConvGrads,
};
pub use norm::{channel_moments, normalize, normalize_backward, NormCache};
pub use pool::{global_pool, maxpool2d, maxpool2d_shape, scatter_argmax, PoolMode};

use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Same shape.
    Exact,
    /// Right operand is `[1, C, 1, 1]`.
    Channel,
    /// Right operand is `[N, C, 1, 1]`.
    SampleChannel,
}

pub fn broadcast_kind(a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Exact);
    }
    let [n, c, _, _] = a.0;
    match b.0 {
        [1, bc, 1, 1] if bc == c => Ok(Broadcast::Channel),
        [bn, bc, 1, 1] if bn == n && bc == c => Ok(Broadcast::SampleChannel),
        _ => Err(shape_err!("cannot broadcast {:?} onto {:?}", b, a)),
    }
}

/// Index into the right operand for flat index `i` of the left operand.
#[inline]
pub(crate) fn bcast_index(kind: Broadcast, shape: Shape, i: usize) -> usize {
    match kind {
        Broadcast::Exact => i,
        Broadcast::Channel => (i / shape.plane()) % shape.c(),
        Broadcast::SampleChannel => i / shape.plane(),
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, |x, y| x * y)
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let kind = broadcast_kind(a.shape(), b.shape())?;
    let shape = a.shape();
    let bd = b.data();
    let data = a.data().iter().enumerate().map(|(i, &x)| f(x, bd[bcast_index(kind, shape, i)])).collect();
    Tensor::from_vec(shape, data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        // Split by sign so exp never overflows.
        if v >= T::zero() {
            (T::one() + (-v).exp()).recip()
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Concatenation along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(crate::Error::Empty("concat input"))?;
    let [n, _, h, w] = first.dims();
    let mut total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims();
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!("concat of {:?} with {:?}", p.shape(), first.shape()));
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for p in parts {
            let item = p.dims()[1] * plane;
            data.extend_from_slice(&p.data()[b * item..(b + 1) * item]);
        }
    }
    Tensor::from_vec([n, total, h, w], data)
}

/// Per-pixel softmax over channels with max subtraction.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let idx = |ch: usize| base + ch * plane + p;
            let m = (0..c).map(|ch| src[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for ch in 0..c {
                let e = (src[idx(ch)] - m).exp();
                dst[idx(ch)] = e;
                z += e;
            }
            for ch in 0..c {
                dst[idx(ch)] /= z;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_examples() {
        let x = Tensor::<f64>::from_f64([1, 1, 1, 3], &[-1., 0., 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        assert_eq!(sigmoid(&Tensor::<f64>::scalar(0.0)).data(), &[0.5]);
        let big = sigmoid(&Tensor::<f32>::from_f64([1, 1, 1, 2], &[-200., 200.]));
        assert!(big.is_finite());
    }

    #[test]
    fn identity_elements() {
        let x = Tensor::<f64>::from_f64([1, 2, 1, 2], &[0.5, -1., 3., 2.]);
        assert_eq!(add(&x, &Tensor::zeros(x.shape())).unwrap(), x);
        assert_eq!(mul(&x, &Tensor::full(x.shape(), 1.0)).unwrap(), x);
        assert_eq!(add(&x, &Tensor::zeros([1, 2, 1, 1])).unwrap(), x);
        assert!(add(&x, &Tensor::zeros([1, 3, 1, 1])).is_err());
    }

    #[test]
    fn channel_broadcast_indexes_planes() {
        let x = Tensor::<f64>::zeros([2, 2, 1, 2]);
        let b = Tensor::<f64>::from_f64([1, 2, 1, 1], &[1., 2.]);
        assert_eq!(add(&x, &b).unwrap().data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
        let s = Tensor::<f64>::from_f64([2, 2, 1, 1], &[1., 2., 3., 4.]);
        assert_eq!(add(&x, &s).unwrap().data(), &[1., 1., 2., 2., 3., 3., 4., 4.]);
    }

    #[test]
    fn concat_shapes_and_roundtrip() {
        let a = Tensor::<f64>::from_f64([2, 1, 1, 2], &[1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_f64([2, 2, 1, 2], &[5., 6., 7., 8., 9., 10., 11., 12.]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), [2, 3, 1, 2]);
        assert_eq!(c.slice_channels(0, 1).unwrap(), a);
        assert_eq!(c.slice_channels(1, 2).unwrap(), b);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        assert!(concat_channels(&[&a, &Tensor::zeros([2, 1, 2, 2])]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::zeros([1, 6, 1, 1]);
        for &p in softmax_channels(&x).data() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        let x = Tensor::<f64>::from_f64([1, 2, 1, 1], &[2f64.ln(), 0.0]);
        let p = softmax_channels(&x);
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }
}
