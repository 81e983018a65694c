use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::blocks::{AggregateNode, Conv, ConvBlock, NodeWidths, Upsample};
use crate::error::{shape_err, Error, Result};
use crate::graph::Var;
use crate::ops::ConvGeom;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two conv blocks at one encoder level; their output is `X_En^level`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLevel {
    pub level: usize,
    pub blocks: [ConvBlock; 2],
}

/// Plain U-Net decoder stage: upsample, concatenate the skip, two conv blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct UpStage {
    pub level: usize,
    pub upsample: Upsample,
    pub blocks: [ConvBlock; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    /// Nodes for levels `1..N−1`, indexed by `level − 1`.
    MultiScale(Vec<AggregateNode>),
    /// Stages ordered bottom-up, levels `N−1` down to 1.
    Plain(Vec<UpStage>),
}

/// Multiply-accumulate count of one convolutional module, per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacEntry {
    pub name: String,
    /// Cost with separate branch convolutions.
    pub branched: u64,
    /// Cost after fusion; equal to `branched` for modules fusion does not touch.
    pub fused: u64,
    /// Whether this entry is a multi-branch conv block.
    pub block: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    cfg: NetworkConfig,
    store: ParamStore<T>,
    encoder: Vec<EncoderLevel>,
    decoder: Decoder,
    head: Conv,
    fused: bool,
}

impl<T: Scalar> Network<T> {
    /// Builds the network with Kaiming-uniform kernels drawn from `seed`.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let branches = cfg.variant.branches();
        let n = cfg.levels;
        let enc_w = cfg.encoder_widths();
        let dec_w = cfg.decoder_widths();

        let mut encoder = Vec::with_capacity(n);
        for level in 1..=n {
            let cin = if level == 1 { cfg.in_channels } else { enc_w[level - 2] };
            let c = enc_w[level - 1];
            let b1 = ConvBlock::new(&mut store, &format!("enc{level}.block1"), cin, c, branches, &mut rng)?;
            let b2 = ConvBlock::new(&mut store, &format!("enc{level}.block2"), c, c, branches, &mut rng)?;
            encoder.push(EncoderLevel { level, blocks: [b1, b2] });
        }

        let (decoder, top_width) = if cfg.variant.multi_scale() {
            let widths = NodeWidths { encoder: &enc_w, decoder: &dec_w };
            let mut nodes = Vec::with_capacity(n - 1);
            for level in (1..n).rev() {
                let name = format!("dec{level}");
                nodes.push(AggregateNode::new(&mut store, &name, level, widths, branches, cfg.cab_ratio, &mut rng)?);
            }
            nodes.reverse();
            (Decoder::MultiScale(nodes), dec_w[0])
        } else {
            let mut stages = Vec::with_capacity(n - 1);
            for level in (1..n).rev() {
                let c = enc_w[level - 1];
                let upsample =
                    Upsample::new(&mut store, &format!("dec{level}.upsample"), enc_w[level], c, 2, &mut rng)?;
                let b1 = ConvBlock::new(&mut store, &format!("dec{level}.block1"), 2 * c, c, branches, &mut rng)?;
                let b2 = ConvBlock::new(&mut store, &format!("dec{level}.block2"), c, c, branches, &mut rng)?;
                stages.push(UpStage { level, upsample, blocks: [b1, b2] });
            }
            (Decoder::Plain(stages), enc_w[0])
        };

        let head = Conv::new(&mut store, "head", top_width, cfg.classes, (1, 1), ConvGeom::unit(), true, &mut rng)?;
        Ok(Network { cfg, store, encoder, decoder, head, fused: false })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn is_fused(&self) -> bool {
        self.fused
    }

    pub fn encoder(&self) -> &[EncoderLevel] {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }

    /// Records the forward pass on `sess`, returning `[N, K, H, W]` logits.
    pub fn forward(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        if self.fused && sess.training() {
            return Err(Error::FusedTraining);
        }
        let s = sess.graph.shape(x);
        if s.c() != self.cfg.in_channels {
            return Err(shape_err!("network expects {} input channels, got {:?}", self.cfg.in_channels, s));
        }
        self.cfg.check_input(s.h(), s.w())?;

        let mut enc = Vec::with_capacity(self.cfg.levels);
        let mut h = x;
        for level in &self.encoder {
            if level.level > 1 {
                h = sess.graph.maxpool2d(h, 2, 2)?;
            }
            h = level.blocks[0].forward(sess, h)?;
            h = level.blocks[1].forward(sess, h)?;
            enc.push(h);
        }

        let top = match &self.decoder {
            Decoder::MultiScale(nodes) => {
                // dec holds X_De^{i+1}..X_De^N while node i runs; X_De^N = X_En^N.
                let mut dec = vec![enc[self.cfg.levels - 1]];
                for node in nodes.iter().rev() {
                    let d = node.forward(sess, &enc, &dec)?;
                    dec.insert(0, d);
                }
                dec[0]
            }
            Decoder::Plain(stages) => {
                let mut h = enc[self.cfg.levels - 1];
                for stage in stages {
                    let up = stage.upsample.forward(sess, h)?;
                    let cat = sess.graph.concat_channels(&[enc[stage.level - 1], up])?;
                    h = stage.blocks[0].forward(sess, cat)?;
                    h = stage.blocks[1].forward(sess, h)?;
                }
                h
            }
        };
        self.head.forward(sess, top)
    }

    /// Value-level forward. `fused` on an unfused network fuses a copy first.
    pub fn forward_logits(&self, x: &Tensor<T>, training: bool, fused: bool) -> Result<Tensor<T>> {
        if training && (fused || self.fused) {
            return Err(Error::FusedTraining);
        }
        if fused && !self.fused {
            return self.fuse()?.forward_logits(x, false, true);
        }
        let mode = if training { Mode::Train } else { Mode::Eval };
        let mut sess = Session::with_grads(&self.store, mode, false);
        let input = sess.input(x.clone());
        let out = self.forward(&mut sess, input)?;
        Ok(sess.graph.value(out).clone())
    }

    /// Per-pixel argmax classes, `[N, H, W]` row-major.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.forward_logits(x, false, false)?.argmax_channels())
    }

    /// Every parameter id reachable from the module tree.
    pub fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        for level in &mut self.encoder {
            level.blocks.iter_mut().for_each(|b| b.visit_ids(f));
        }
        match &mut self.decoder {
            Decoder::MultiScale(nodes) => nodes.iter_mut().for_each(|n| n.visit_ids(f)),
            Decoder::Plain(stages) => {
                for s in stages {
                    s.upsample.visit_ids(f);
                    s.blocks.iter_mut().for_each(|b| b.visit_ids(f));
                }
            }
        }
        self.head.visit_ids(f);
    }

    fn blocks_mut(&mut self) -> Vec<&mut ConvBlock> {
        let mut out: Vec<&mut ConvBlock> = Vec::new();
        for level in &mut self.encoder {
            out.extend(level.blocks.iter_mut());
        }
        match &mut self.decoder {
            Decoder::MultiScale(nodes) => {
                for n in nodes {
                    out.extend(n.blocks_mut());
                }
            }
            Decoder::Plain(stages) => {
                for s in stages {
                    out.extend(s.blocks.iter_mut());
                }
            }
        }
        out
    }

    /// Re-parameterizes every conv block into a single 3×3 convolution plus
    /// affine. The result supports inference only; parameter names outside
    /// the conv blocks are unchanged.
    pub fn fuse(&self) -> Result<Self> {
        let mut net = self.clone();
        let mut store = self.store.clone();
        for block in net.blocks_mut() {
            if !block.is_fused() {
                *block = block.fused_into(&self.store, &mut store)?;
            }
        }
        net.store = store;
        net.fused = true;
        net.compact();
        Ok(net)
    }

    /// Drops parameters no module references any more.
    fn compact(&mut self) {
        let mut used = vec![false; self.store.len()];
        self.visit_ids(&mut |id| used[id.index()] = true);
        let mut map = vec![None; self.store.len()];
        let mut store = ParamStore::new();
        for (id, entry) in self.store.ids().zip(self.store.entries()) {
            if used[id.index()] {
                let new_id =
                    store.add(entry.name.clone(), entry.tensor.clone(), entry.kind).expect("names stay unique");
                map[id.index()] = Some(new_id);
            }
        }
        self.visit_ids(&mut |id| *id = map[id.index()].expect("referenced parameter kept"));
        self.store = store;
    }

    /// Scalar count over kernels, biases, γ and β (running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.store.trainable_count()
    }

    /// Trainable scalars per top-level module (`enc1`, `dec3`, `head`, ...), in build order.
    pub fn param_table(&self) -> Vec<(String, usize)> {
        let mut table: Vec<(String, usize)> = Vec::new();
        for e in self.store.entries() {
            if e.kind != crate::params::ParamKind::Trainable {
                continue;
            }
            let module = e.name.split('.').next().unwrap_or(&e.name);
            match table.iter_mut().find(|(m, _)| m == module) {
                Some((_, count)) => *count += e.tensor.numel(),
                None => table.push((module.to_string(), e.tensor.numel())),
            }
        }
        table
    }

    /// Analytic per-sample MAC counts of every convolution at input `h × w`.
    pub fn mac_report(&self, h: usize, w: usize) -> Result<Vec<MacEntry>> {
        self.cfg.check_input(h, w)?;
        let res = |level: usize| (h >> (level - 1), w >> (level - 1));
        let mut out = Vec::new();
        let push_block = |out: &mut Vec<MacEntry>, b: &ConvBlock, (bh, bw): (usize, usize)| {
            let (branched, fused) = b.macs(bh, bw);
            let block = b.branches.footprint() > 9 && !b.is_fused();
            out.push(MacEntry { name: b.name.clone(), branched, fused, block });
        };
        let plain = |name: String, macs: u64| MacEntry { name, branched: macs, fused: macs, block: false };
        for level in &self.encoder {
            for b in &level.blocks {
                push_block(&mut out, b, res(level.level));
            }
        }
        match &self.decoder {
            Decoder::MultiScale(nodes) => {
                for node in nodes {
                    let r = res(node.level);
                    for d in &node.down {
                        push_block(&mut out, &d.block, r);
                    }
                    for u in &node.up {
                        let (ih, iw) = res(u.from);
                        out.push(plain(format!("dec{}.up{}.upsample", node.level, u.from), u.upsample.macs(ih, iw)));
                        push_block(&mut out, &u.block, r);
                    }
                    if let Some(a) = &node.attention {
                        out.push(plain(format!("dec{}.cab", node.level), a.macs(r.0, r.1)));
                    }
                }
            }
            Decoder::Plain(stages) => {
                for s in stages {
                    let (ih, iw) = res(s.level + 1);
                    out.push(plain(format!("dec{}.upsample", s.level), s.upsample.macs(ih, iw)));
                    for b in &s.blocks {
                        push_block(&mut out, b, res(s.level));
                    }
                }
            }
        }
        out.push(plain("head".into(), self.head.macs(h, w)));
        Ok(out)
    }

    /// Replaces a parameter by name, keeping its shape.
    pub fn set_param(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self.store.find(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let current = self.store.get(id).shape();
        if current != tensor.shape() {
            return Err(shape_err!("parameter `{name}` is {:?}, got {:?}", current, tensor.shape()));
        }
        *self.store.get_mut(id) = tensor;
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut store = ParamStore::new();
        for e in self.store.entries() {
            store.add(e.name.clone(), e.tensor.cast(), e.kind).expect("names stay unique");
        }
        Network {
            cfg: self.cfg,
            store,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            fused: self.fused,
        }
    }
}
