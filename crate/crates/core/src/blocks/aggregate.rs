use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::acb::{Branches, ConvBlock};
use super::cab::ChannelAttention;
use super::layers::Upsample;
use crate::error::{shape_err, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;

/// Encoder level `from` (< level) reaching the node through max-pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct DownBranch {
    pub from: usize,
    pub block: ConvBlock,
}

/// Decoder level `from` (> level) reaching the node through a transposed convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct UpBranch {
    pub from: usize,
    pub upsample: Upsample,
    pub block: ConvBlock,
}

/// Widths shared by every node of one network.
#[derive(Clone, Copy, Debug)]
pub struct NodeWidths<'a> {
    /// `C_1..C_N`.
    pub encoder: &'a [usize],
    /// `D_1..D_N`.
    pub decoder: &'a [usize],
}

/// Multi-scale decoder node producing `X_De^level`.
///
/// For `level < N` the node concatenates, in scale order 1..N:
/// max-pooled encoder maps `X_En^k` (k < level) each refined by a conv
/// block, the same-level encoder map `X_En^level` unchanged, and upsampled
/// decoder maps `X_De^k` (k > level) each followed by a conv block. Every
/// branch carries `C_level` channels at the level's resolution; a channel
/// attention block maps the `N·C_level` concatenation to `D_level`.
/// At `level == N` the node is the identity on `X_En^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateNode {
    pub level: usize,
    pub levels: usize,
    pub down: Vec<DownBranch>,
    pub up: Vec<UpBranch>,
    pub attention: Option<ChannelAttention>,
}

impl AggregateNode {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        level: usize,
        widths: NodeWidths<'_>,
        branches: Branches,
        ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let levels = widths.encoder.len();
        if widths.decoder.len() != levels || level == 0 || level > levels {
            return Err(crate::Error::Config(format!("node level {level} of {levels}")));
        }
        if level == levels {
            return Ok(AggregateNode { level, levels, down: Vec::new(), up: Vec::new(), attention: None });
        }
        let width = widths.encoder[level - 1];
        let mut down = Vec::new();
        for from in 1..level {
            let block = ConvBlock::new(
                store,
                &format!("{name}.down{from}.block"),
                widths.encoder[from - 1],
                width,
                branches,
                rng,
            )?;
            down.push(DownBranch { from, block });
        }
        let mut up = Vec::new();
        for from in level + 1..=levels {
            let factor = 1 << (from - level);
            let upsample = Upsample::new(
                store,
                &format!("{name}.up{from}.upsample"),
                widths.decoder[from - 1],
                width,
                factor,
                rng,
            )?;
            let block = ConvBlock::new(store, &format!("{name}.up{from}.block"), width, width, branches, rng)?;
            up.push(UpBranch { from, upsample, block });
        }
        let attention = Some(ChannelAttention::new(
            store,
            &format!("{name}.cab"),
            levels * width,
            widths.decoder[level - 1],
            ratio,
            rng,
        )?);
        Ok(AggregateNode { level, levels, down, up, attention })
    }

    /// Number of branches entering the concatenation.
    pub fn arity(&self) -> usize {
        if self.attention.is_some() {
            self.down.len() + 1 + self.up.len()
        } else {
            0
        }
    }

    /// `enc` holds `X_En^1..X_En^N`; `dec` holds `X_De^{level+1}..X_De^N`.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, enc: &[Var], dec: &[Var]) -> Result<Var> {
        if enc.len() != self.levels {
            return Err(shape_err!("node {} needs {} encoder maps, got {}", self.level, self.levels, enc.len()));
        }
        if dec.len() != self.levels - self.level {
            return Err(shape_err!(
                "node {} needs {} decoder maps, got {}",
                self.level,
                self.levels - self.level,
                dec.len()
            ));
        }
        let same = enc[self.level - 1];
        let Some(attention) = &self.attention else {
            return Ok(same);
        };
        let mut branches = Vec::with_capacity(self.levels);
        for d in &self.down {
            let factor = 1 << (self.level - d.from);
            let pooled = sess.graph.maxpool2d(enc[d.from - 1], factor, factor)?;
            branches.push(d.block.forward(sess, pooled)?);
        }
        branches.push(same);
        for u in &self.up {
            let up = u.upsample.forward(sess, dec[u.from - self.level - 1])?;
            branches.push(u.block.forward(sess, up)?);
        }
        let target = sess.graph.shape(same);
        for &b in &branches {
            let s = sess.graph.shape(b);
            if (s.h(), s.w()) != (target.h(), target.w()) {
                return Err(shape_err!("node {} branch {:?} vs same-level {:?}", self.level, s, target));
            }
        }
        let cat = sess.graph.concat_channels(&branches)?;
        attention.forward(sess, cat)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock> {
        self.down.iter_mut().map(|d| &mut d.block).chain(self.up.iter_mut().map(|u| &mut u.block))
    }

    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        for d in &mut self.down {
            d.block.visit_ids(f);
        }
        for u in &mut self.up {
            u.upsample.visit_ids(f);
            u.block.visit_ids(f);
        }
        if let Some(a) = self.attention.as_mut() {
            a.visit_ids(f);
        }
    }
}
