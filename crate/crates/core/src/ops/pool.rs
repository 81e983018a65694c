use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

pub fn maxpool2d_shape(x: Shape, k: usize, s: usize) -> Result<Shape> {
    let [n, c, h, w] = x.0;
    if k == 0 || s == 0 {
        return Err(shape_err!("maxpool2d: window {k} stride {s}"));
    }
    if k == s && (h % s != 0 || w % s != 0) {
        return Err(shape_err!("maxpool2d: {h}x{w} not divisible by {s}"));
    }
    if h < k || w < k {
        return Err(Error::EmptyOutput(alloc::format!("maxpool2d: {h}x{w} with window {k}")));
    }
    Ok(Shape::new(n, c, (h - k) / s + 1, (w - k) / s + 1))
}

/// Window maximum. Also returns, per output element, the flat input index
/// of the first (row-major) maximum, which is where backward routes gradient.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, s: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let out_shape = maxpool2d_shape(x.shape(), k, s)?;
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (out_shape.h(), out_shape.w());
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut arg = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * s * w + ox * s;
                let mut best = data[best_i];
                for i in 0..k {
                    let row = base + (oy * s + i) * w + ox * s;
                    for (j, &v) in data[row..row + k].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_i = row + j;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, arg))
}

/// Routes each output gradient to its recorded argmax.
pub fn scatter_argmax<T: Scalar>(input: Shape, arg: &[usize], dy: &[T]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input);
    let d = dx.data_mut();
    for (&i, &g) in arg.iter().zip(dy) {
        d[i] += g;
    }
    dx
}

/// Spatial average or maximum per channel, output `[N, C, 1, 1]`.
pub fn global_pool<T: Scalar>(x: &Tensor<T>, mode: PoolMode) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    if plane == 0 {
        return Err(Error::EmptyOutput(alloc::format!("global pool over {:?}", x.shape())));
    }
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::new();
    for (p, chunk) in x.data().chunks(plane).enumerate() {
        match mode {
            PoolMode::Avg => out.push(chunk.iter().copied().sum::<T>() / T::lit(plane as f64)),
            PoolMode::Max => {
                let mut best_i = 0;
                for (i, &v) in chunk.iter().enumerate() {
                    if v > chunk[best_i] {
                        best_i = i;
                    }
                }
                out.push(chunk[best_i]);
                arg.push(p * plane + best_i);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, 1, 1], out)?, arg))
}
