//! im2col/GEMM convolution and transposed convolution, forward and backward.
//!
//! Convolution is cross-correlation (no kernel flip). Kernels are laid out
//! `[out, in, kh, kw]` for convolution and `[in, out, kh, kw]` for the
//! transposed convolution, so that both reduce to one GEMM per sample
//! against the same column buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Stride and per-axis zero padding `(rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: (usize, usize)) -> Self {
        ConvGeom { stride, padding }
    }

    /// Stride 1, no padding.
    pub const fn unit() -> Self {
        ConvGeom { stride: 1, padding: (0, 0) }
    }

    /// Output extent of a cross-correlation along one axis, `None` when empty.
    pub fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    pub fn transposed_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let full = (input.checked_sub(1)?) * stride + kernel;
        (stride > 0 && full > 2 * pad).then(|| full - 2 * pad)
    }
}

/// Sizes shared by `im2col` and `col2im`: the padded image plane, the kernel
/// footprint and the grid of kernel positions.
#[derive(Clone, Copy, Debug)]
struct Patches {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = o * stride + k;
        pos.checked_sub(pad).filter(|&p| p < extent)
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let n_cols = self.cols();
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match Self::src(oy, ki, self.stride, self.ph, self.h) {
                            None => out_row.fill(T::zero()),
                            Some(iy) => {
                                let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, slot) in out_row.iter_mut().enumerate() {
                                    *slot = match Self::src(ox, kj, self.stride, self.pw, self.w) {
                                        Some(ix) => src_row[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the image plane (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let n_cols = self.cols();
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.oh {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.ph, self.h) else {
                            continue;
                        };
                        let in_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        for (ox, &v) in in_row.iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, self.stride, self.pw, self.w) {
                                plane[iy * self.w + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, out_channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != out_channels {
            return Err(shape_err!("bias has {} entries for {} output channels", b.numel(), out_channels));
        }
    }
    Ok(())
}

fn conv_patches(x: Shape, kernel: Shape, geom: ConvGeom) -> Result<Patches> {
    let [_, c, h, w] = x.0;
    let [_, kc, kh, kw] = kernel.0;
    if kc != c {
        return Err(shape_err!("conv2d: input {:?} has {c} channels, kernel {:?} expects {kc}", x, kernel));
    }
    if kh == 0 || kw == 0 || kernel.n() == 0 {
        return Err(shape_err!("conv2d: degenerate kernel {:?}", kernel));
    }
    let (ph, pw) = geom.padding;
    let oh = ConvGeom::out_dim(h, kh, geom.stride, ph);
    let ow = ConvGeom::out_dim(w, kw, geom.stride, pw);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
            Ok(Patches { channels: c, h, w, kh, kw, stride: geom.stride, ph, pw, oh, ow })
        }
        _ => Err(Error::EmptyOutput(alloc::format!("conv2d of {:?} with kernel {:?}, {:?}", x, kernel, geom))),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[ch % bias.len()];
        for v in chunk {
            *v += b;
        }
    }
}

/// Output shape of `conv2d` without computing it.
pub fn conv2d_shape(x: Shape, kernel: Shape, geom: ConvGeom) -> Result<Shape> {
    let p = conv_patches(x, kernel, geom)?;
    Ok(Shape::new(x.n(), kernel.n(), p.oh, p.ow))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let p = conv_patches(x.shape(), kernel.shape(), geom)?;
    let cout = kernel.dims()[0];
    check_bias(bias, cout)?;
    let n = x.dims()[0];
    let (k, cols_n) = (p.rows(), p.cols());
    let mut out = Tensor::zeros([n, cout, p.oh, p.ow]);
    let mut cols = if p.is_identity() { Vec::new() } else { vec![T::zero(); k * cols_n] };
    let in_item = p.channels * p.h * p.w;
    for b in 0..n {
        let img = &x.data()[b * in_item..(b + 1) * in_item];
        let rhs: &[T] = if p.is_identity() {
            img
        } else {
            p.im2col(img, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[b * cout * cols_n..(b + 1) * cout * cols_n];
        T::gemm(false, false, cout, cols_n, k, kernel.data(), rhs, T::zero(), dst);
        if let Some(bias) = bias {
            add_bias(dst, bias.data(), cols_n);
        }
    }
    Ok(out)
}

/// Gradients of `conv2d`. `want_x` skips the input gradient when not needed.
pub struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeom,
    dy: &Tensor<T>,
    want_x: bool,
) -> Result<ConvGrads<T>> {
    let p = conv_patches(x.shape(), kernel.shape(), geom)?;
    let cout = kernel.dims()[0];
    let n = x.dims()[0];
    let (k, cols_n) = (p.rows(), p.cols());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = vec![T::zero(); cout];
    let mut dx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut cols = if p.is_identity() { Vec::new() } else { vec![T::zero(); k * cols_n] };
    let mut dcols = vec![T::zero(); k * cols_n];
    let in_item = p.channels * p.h * p.w;
    for b in 0..n {
        let g = &dy.data()[b * cout * cols_n..(b + 1) * cout * cols_n];
        for (ch, chunk) in g.chunks(cols_n).enumerate() {
            db[ch] += chunk.iter().copied().sum::<T>();
        }
        let img = &x.data()[b * in_item..(b + 1) * in_item];
        let rhs: &[T] = if p.is_identity() {
            img
        } else {
            p.im2col(img, &mut cols);
            &cols
        };
        // dK += dY · colsᵀ
        T::gemm(false, true, cout, k, cols_n, g, rhs, T::one(), dk.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[b * in_item..(b + 1) * in_item];
            if p.is_identity() {
                T::gemm(true, false, k, cols_n, cout, kernel.data(), g, T::one(), dst);
            } else {
                T::gemm(true, false, k, cols_n, cout, kernel.data(), g, T::zero(), &mut dcols);
                p.col2im(&dcols, dst);
            }
        }
    }
    Ok(ConvGrads { x: dx, kernel: dk, bias: db })
}

fn transposed_patches(x: Shape, kernel: Shape, geom: ConvGeom) -> Result<Patches> {
    let [_, c, h, w] = x.0;
    let [kc, cout, kh, kw] = kernel.0;
    if kc != c {
        return Err(shape_err!("conv_transpose2d: input {:?} has {c} channels, kernel {:?} expects {kc}", x, kernel));
    }
    if kh == 0 || kw == 0 || cout == 0 || geom.stride == 0 {
        return Err(shape_err!("conv_transpose2d: degenerate kernel {:?} or stride", kernel));
    }
    let (ph, pw) = geom.padding;
    let oh = ConvGeom::transposed_out_dim(h, kh, geom.stride, ph);
    let ow = ConvGeom::transposed_out_dim(w, kw, geom.stride, pw);
    match (oh, ow) {
        // The column grid walks the *output* plane, producing one column per input pixel.
        (Some(oh), Some(ow)) => {
            Ok(Patches { channels: cout, h: oh, w: ow, kh, kw, stride: geom.stride, ph, pw, oh: h, ow: w })
        }
        _ => {
            Err(Error::EmptyOutput(alloc::format!("conv_transpose2d of {:?} with kernel {:?}, {:?}", x, kernel, geom)))
        }
    }
}

pub fn conv_transpose2d_shape(x: Shape, kernel: Shape, geom: ConvGeom) -> Result<Shape> {
    let p = transposed_patches(x, kernel, geom)?;
    Ok(Shape::new(x.n(), kernel.0[1], p.h, p.w))
}

/// Transposed convolution (gradient of `conv2d` w.r.t. its input), kernel `[in, out, kh, kw]`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let p = transposed_patches(x.shape(), kernel.shape(), geom)?;
    let [n, cin, _, _] = x.dims();
    let cout = p.channels;
    check_bias(bias, cout)?;
    let (k, cols_n) = (p.rows(), p.cols());
    let out_item = cout * p.h * p.w;
    let mut out = Tensor::zeros([n, cout, p.h, p.w]);
    let mut cols = vec![T::zero(); k * cols_n];
    for b in 0..n {
        let img = &x.data()[b * cin * cols_n..(b + 1) * cin * cols_n];
        // cols = Kᵀ · X with K viewed as [cin, cout·kh·kw]
        T::gemm(true, false, k, cols_n, cin, kernel.data(), img, T::zero(), &mut cols);
        let dst = &mut out.data_mut()[b * out_item..(b + 1) * out_item];
        p.col2im(&cols, dst);
        if let Some(bias) = bias {
            add_bias(dst, bias.data(), p.h * p.w);
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeom,
    dy: &Tensor<T>,
    want_x: bool,
) -> Result<ConvGrads<T>> {
    let p = transposed_patches(x.shape(), kernel.shape(), geom)?;
    let [n, cin, _, _] = x.dims();
    let cout = p.channels;
    let (k, cols_n) = (p.rows(), p.cols());
    let out_item = cout * p.h * p.w;
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = vec![T::zero(); cout];
    let mut dx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut dcols = vec![T::zero(); k * cols_n];
    for b in 0..n {
        let g = &dy.data()[b * out_item..(b + 1) * out_item];
        for (ch, chunk) in g.chunks(p.h * p.w).enumerate() {
            db[ch] += chunk.iter().copied().sum::<T>();
        }
        p.im2col(g, &mut dcols);
        let img = &x.data()[b * cin * cols_n..(b + 1) * cin * cols_n];
        // dK += X · dcolsᵀ
        T::gemm(false, true, cin, k, cols_n, img, &dcols, T::one(), dk.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[b * cin * cols_n..(b + 1) * cin * cols_n];
            T::gemm(false, false, cin, cols_n, k, kernel.data(), &dcols, T::zero(), dst);
        }
    }
    Ok(ConvGrads { x: dx, kernel: dk, bias: db })
}
