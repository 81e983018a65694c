//! Asymmetric convolution block and its inference-time re-parameterization.
//!
//! The block sums a 3×3, a 1×3 and a 3×1 convolution of the same input,
//! then applies one shared batch norm and a ReLU. Because the branch sum is
//! linear and the inference-mode batch norm is a per-channel affine map,
//! the whole block collapses into a single 3×3 convolution followed by an
//! affine and a ReLU: the 1×3 kernel lands on the middle row of the 3×3
//! footprint and the 3×1 kernel on the middle column.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{BatchNorm, Conv};
use crate::error::{shape_err, Error, Result};
use crate::graph::Var;
use crate::ops::{self, ConvGeom};
use crate::params::{ParamId, ParamKind, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which kernels a [`ConvBlock`] sums before its batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branches {
    /// 3×3 only: the plain conv + BN + ReLU block.
    Square,
    /// 3×3 + 1×3.
    SquareHorizontal,
    /// 3×3 + 3×1.
    SquareVertical,
    /// 3×3 + 1×3 + 3×1: the full ACB.
    Asymmetric,
}

impl Branches {
    pub fn horizontal(self) -> bool {
        matches!(self, Branches::SquareHorizontal | Branches::Asymmetric)
    }

    pub fn vertical(self) -> bool {
        matches!(self, Branches::SquareVertical | Branches::Asymmetric)
    }

    /// Kernel taps per (input, output) channel pair summed over branches.
    pub fn footprint(self) -> usize {
        9 + 3 * usize::from(self.horizontal()) + 3 * usize::from(self.vertical())
    }
}

pub const SQUARE_GEOM: ConvGeom = ConvGeom::new(1, (1, 1));
pub const HORIZONTAL_GEOM: ConvGeom = ConvGeom::new(1, (0, 1));
pub const VERTICAL_GEOM: ConvGeom = ConvGeom::new(1, (1, 0));

/// Training-time parameters of an asymmetric convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct AcbParams {
    pub square: Conv,
    pub horizontal: Option<Conv>,
    pub vertical: Option<Conv>,
    pub bn: BatchNorm,
}

/// Parameter ids of a fused block: a 3×3 conv with bias plus per-channel affine.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedIds {
    pub conv: Conv,
    pub scale: ParamId,
    pub shift: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockState {
    Branched(AcbParams),
    Fused(FusedIds),
}

/// Conv (one or more branches) → BN → ReLU, or its fused equivalent.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    /// Parameter name prefix.
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub branches: Branches,
    pub state: BlockState,
}

impl ConvBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        branches: Branches,
        rng: &mut R,
    ) -> Result<Self> {
        let branch = |store: &mut ParamStore<T>, rng: &mut R, tag: &str, k: (usize, usize), geom| {
            Conv::new(store, &format!("{name}.{tag}"), in_channels, out_channels, k, geom, false, rng)
        };
        let square = branch(store, rng, "sq", (3, 3), SQUARE_GEOM)?;
        let horizontal =
            if branches.horizontal() { Some(branch(store, rng, "hor", (1, 3), HORIZONTAL_GEOM)?) } else { None };
        let vertical = if branches.vertical() { Some(branch(store, rng, "ver", (3, 1), VERTICAL_GEOM)?) } else { None };
        let bn = BatchNorm::new(store, &format!("{name}.bn"), out_channels)?;
        Ok(ConvBlock {
            name: name.to_string(),
            in_channels,
            out_channels,
            branches,
            state: BlockState::Branched(AcbParams { square, horizontal, vertical, bn }),
        })
    }

    pub fn is_fused(&self) -> bool {
        matches!(self.state, BlockState::Fused(_))
    }

    pub fn params(&self) -> Option<&AcbParams> {
        match &self.state {
            BlockState::Branched(p) => Some(p),
            BlockState::Fused(_) => None,
        }
    }

    /// `relu(bn(Σ branch(x)))`, or `relu(scale·conv(x) + shift)` once fused.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let c = sess.graph.shape(x).c();
        if c != self.in_channels {
            return Err(shape_err!("conv block expects {} channels, got {c}", self.in_channels));
        }
        match &self.state {
            BlockState::Branched(p) => {
                let mut sum = p.square.forward(sess, x)?;
                for branch in [&p.horizontal, &p.vertical].into_iter().flatten() {
                    let y = branch.forward(sess, x)?;
                    sum = sess.graph.add(sum, y)?;
                }
                let y = p.bn.forward(sess, sum)?;
                Ok(sess.graph.relu(y))
            }
            BlockState::Fused(f) => {
                if sess.training() {
                    return Err(Error::FusedTraining);
                }
                let y = f.conv.forward(sess, x)?;
                let scale = sess.param(f.scale);
                let shift = sess.param(f.shift);
                let y = sess.graph.mul(y, scale)?;
                let y = sess.graph.add(y, shift)?;
                Ok(sess.graph.relu(y))
            }
        }
    }

    /// Folds the branches and the running batch-norm statistics into one
    /// 3×3 convolution plus affine.
    pub fn fuse<T: Scalar>(&self, store: &ParamStore<T>) -> Result<FusedConv<T>> {
        match &self.state {
            BlockState::Branched(p) => acb_fuse(p, store),
            BlockState::Fused(f) => Ok(FusedConv {
                kernel: store.get(f.conv.weight).clone(),
                bias: store.get(f.conv.bias.expect("fused conv has bias")).clone(),
                scale: store.get(f.scale).data().to_vec(),
                shift: store.get(f.shift).data().to_vec(),
            }),
        }
    }

    /// Writes the fused parameters of this block into `dst` and returns the
    /// block in its fused state.
    pub fn fused_into<T: Scalar>(&self, src: &ParamStore<T>, dst: &mut ParamStore<T>) -> Result<Self> {
        let fused = self.fuse(src)?;
        let name = &self.name;
        let cout = self.out_channels;
        let weight = dst.add(format!("{name}.fused.weight"), fused.kernel, ParamKind::Trainable)?;
        let bias = dst.add(format!("{name}.fused.bias"), fused.bias, ParamKind::Trainable)?;
        let scale = dst.add(
            format!("{name}.fused.scale"),
            Tensor::from_vec([1, cout, 1, 1], fused.scale)?,
            ParamKind::Trainable,
        )?;
        let shift = dst.add(
            format!("{name}.fused.shift"),
            Tensor::from_vec([1, cout, 1, 1], fused.shift)?,
            ParamKind::Trainable,
        )?;
        let conv = Conv {
            weight,
            bias: Some(bias),
            geom: SQUARE_GEOM,
            in_channels: self.in_channels,
            out_channels: cout,
            kernel: (3, 3),
        };
        Ok(ConvBlock { state: BlockState::Fused(FusedIds { conv, scale, shift }), ..self.clone() })
    }

    /// `(branched, fused)` multiply-accumulates of the block's convolutions at `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> (u64, u64) {
        let pair_plane = (self.in_channels * self.out_channels * h * w) as u64;
        let fused = 9 * pair_plane;
        match self.state {
            BlockState::Branched(_) => (self.branches.footprint() as u64 * pair_plane, fused),
            BlockState::Fused(_) => (fused, fused),
        }
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        match &mut self.state {
            BlockState::Branched(p) => {
                p.square.visit_ids(f);
                if let Some(c) = p.horizontal.as_mut() {
                    c.visit_ids(f);
                }
                if let Some(c) = p.vertical.as_mut() {
                    c.visit_ids(f);
                }
                p.bn.visit_ids(f);
            }
            BlockState::Fused(p) => {
                p.conv.visit_ids(f);
                f(&mut p.scale);
                f(&mut p.shift);
            }
        }
    }
}

/// A re-parameterized block: `relu(scale ⊙ (conv3×3(x) + bias) + shift)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedConv<T> {
    /// `[out, in, 3, 3]`.
    pub kernel: Tensor<T>,
    /// `[1, out, 1, 1]`.
    pub bias: Tensor<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> FusedConv<T> {
    /// Value-level evaluation, no graph.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::conv2d(x, &self.kernel, Some(&self.bias), SQUARE_GEOM)?;
        let cout = self.scale.len();
        let scale = Tensor::from_vec([1, cout, 1, 1], self.scale.clone())?;
        let shift = Tensor::from_vec([1, cout, 1, 1], self.shift.clone())?;
        Ok(ops::relu(&ops::add(&ops::mul(&y, &scale)?, &shift)?))
    }
}

/// Re-parameterizes an ACB for inference.
pub fn acb_fuse<T: Scalar>(p: &AcbParams, store: &ParamStore<T>) -> Result<FusedConv<T>> {
    let (scale, shift) = p.bn.inference_affine(store)?;
    let mut kernel = store.get(p.square.weight).clone();
    let [cout, cin, _, _] = kernel.dims();
    let mut bias = Tensor::zeros([1, cout, 1, 1]);
    let mut add_bias = |conv: &Conv| {
        if let Some(b) = conv.bias {
            for (acc, &v) in bias.data_mut().iter_mut().zip(store.get(b).data()) {
                *acc += v;
            }
        }
    };
    add_bias(&p.square);
    if let Some(h) = &p.horizontal {
        add_bias(h);
        let k = store.get(h.weight);
        for o in 0..cout {
            for i in 0..cin {
                for j in 0..3 {
                    *kernel.at_mut(o, i, 1, j) += k.at(o, i, 0, j);
                }
            }
        }
    }
    if let Some(v) = &p.vertical {
        add_bias(v);
        let k = store.get(v.weight);
        for o in 0..cout {
            for i in 0..cin {
                for j in 0..3 {
                    *kernel.at_mut(o, i, j, 1) += k.at(o, i, j, 0);
                }
            }
        }
    }
    if !kernel.is_finite() {
        return Err(Error::BadStatistics("non-finite kernel".into()));
    }
    Ok(FusedConv { kernel, bias, scale, shift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(branches: Branches) -> (ParamStore<f64>, ConvBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let b = ConvBlock::new(&mut store, "acb", 3, 16, branches, &mut rng).unwrap();
        (store, b)
    }

    #[test]
    fn parameter_count_of_one_acb() {
        let (store, _) = block(Branches::Asymmetric);
        assert_eq!(store.trainable_count(), 752);
        let (store, _) = block(Branches::Square);
        assert_eq!(store.trainable_count(), 3 * 16 * 9 + 32);
    }

    #[test]
    fn mac_ratio_is_nine_fifteenths() {
        let (_, b) = block(Branches::Asymmetric);
        let (unfused, fused) = b.macs(32, 32);
        assert_eq!(unfused, 15 * 3 * 16 * 32 * 32);
        assert_eq!(fused * 15, unfused * 9);
    }

    #[test]
    fn identity_fold() {
        let (mut store, b) = block(Branches::Asymmetric);
        let p = b.params().unwrap().clone();
        for id in [p.horizontal.as_ref().unwrap().weight, p.vertical.as_ref().unwrap().weight] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut bn = p.bn.clone();
        bn.eps = 0.0;
        let p = AcbParams { bn, ..p };
        let fused = acb_fuse(&p, &store).unwrap();
        assert_eq!(&fused.kernel, store.get(p.square.weight));
        assert!(fused.scale.iter().all(|&s| s == 1.0));
        assert!(fused.shift.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn fused_block_rejects_training() {
        let (store, b) = block(Branches::Asymmetric);
        let mut dst = ParamStore::new();
        let fused = b.fused_into(&store, &mut dst).unwrap();
        let mut sess = Session::new(&dst, Mode::Train);
        let x = sess.input(Tensor::zeros([1, 3, 4, 4]));
        assert_eq!(fused.forward(&mut sess, x), Err(Error::FusedTraining));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let (store, b) = block(Branches::Asymmetric);
        let mut sess = Session::new(&store, Mode::Eval);
        let x = sess.input(Tensor::zeros([1, 4, 4, 4]));
        assert!(matches!(b.forward(&mut sess, x), Err(Error::Shape(_))));
    }

    #[test]
    fn nan_statistics_cannot_be_fused() {
        let (mut store, b) = block(Branches::Asymmetric);
        let id = b.params().unwrap().bn.running_var;
        store.get_mut(id).data_mut()[0] = f64::NAN;
        assert!(matches!(b.fuse(&store), Err(Error::BadStatistics(_))));
    }
}
