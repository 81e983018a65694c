//! The f64 finite-difference suite over every primitive, every block and a
//! tiny end-to-end network.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{AggregateNode, Branches, ChannelAttention, ConvBlock, NodeWidths};
use crate::error::Result;
use crate::gradcheck::{central_differences, grad_check, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::model::{Network, NetworkConfig, Variant};
use crate::ops::{ConvGeom, PoolMode};
use crate::params::{Mode, ParamKind, ParamStore, Session};
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-5;
pub const BLOCK_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub tol: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tol)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// Values at least 0.1 away from zero, so ±h never crosses a ReLU kink.
fn away_from_zero(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::uniform(shape, 0.1, 1.0, r);
    for v in t.data_mut() {
        if r.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ out ⊙ R` for a fixed random `R`: unlike a plain sum it has non-zero
/// gradient through a training-mode batch norm.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let s = g.shape(out);
    let w = g.input(randn(s.0, &mut rng(seed)));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

type Primitive = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, Primitive)> {
    let r = &mut rng(11);
    vec![
        ("conv2d", vec![randn([2, 3, 5, 6], r), randn([4, 3, 3, 2], r), randn([1, 4, 1, 1], r)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, (1, 0)))?;
            weighted_sum(g, y, 1)
        }),
        ("conv2d_asymmetric_padding", vec![randn([1, 2, 4, 4], r), randn([3, 2, 1, 3], r)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, ConvGeom::new(1, (0, 1)))?;
            weighted_sum(g, y, 2)
        }),
        ("conv_transpose2d", vec![randn([2, 3, 3, 3], r), randn([3, 2, 2, 2], r), randn([1, 2, 1, 1], r)], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, (0, 0)))?;
            weighted_sum(g, y, 3)
        }),
        ("conv_transpose2d_overlap", vec![randn([1, 2, 3, 3], r), randn([2, 3, 3, 3], r)], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], None, ConvGeom::new(2, (1, 1)))?;
            weighted_sum(g, y, 4)
        }),
        ("maxpool2d", vec![randn([2, 2, 4, 6], r)], |g, v| {
            let y = g.maxpool2d(v[0], 2, 2)?;
            weighted_sum(g, y, 5)
        }),
        ("global_avg_pool", vec![randn([2, 3, 3, 4], r)], |g, v| {
            let y = g.global_pool(v[0], PoolMode::Avg)?;
            weighted_sum(g, y, 6)
        }),
        ("global_max_pool", vec![randn([2, 3, 3, 4], r)], |g, v| {
            let y = g.global_pool(v[0], PoolMode::Max)?;
            weighted_sum(g, y, 7)
        }),
        ("batch_norm_train", vec![randn([3, 2, 3, 3], r), randn([1, 2, 1, 1], r), randn([1, 2, 1, 1], r)], |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y, 8)
        }),
        ("batch_norm_eval", vec![randn([2, 2, 3, 3], r), randn([1, 2, 1, 1], r), randn([1, 2, 1, 1], r)], |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.3], &[0.5, 2.0], 1e-5)?;
            weighted_sum(g, y, 9)
        }),
        ("relu", vec![away_from_zero([2, 3, 3, 3], r)], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 10)
        }),
        ("sigmoid", vec![randn([2, 3, 3, 3], r)], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y, 11)
        }),
        ("add", vec![randn([2, 3, 2, 2], r), randn([2, 3, 2, 2], r)], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 12)
        }),
        ("add_channel_broadcast", vec![randn([2, 3, 2, 2], r), randn([1, 3, 1, 1], r)], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 13)
        }),
        ("mul", vec![randn([2, 3, 2, 2], r), randn([2, 3, 2, 2], r)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 14)
        }),
        ("mul_sample_channel_broadcast", vec![randn([2, 3, 2, 2], r), randn([2, 3, 1, 1], r)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 15)
        }),
        ("concat_channels", vec![randn([2, 1, 2, 3], r), randn([2, 3, 2, 3], r)], |g, v| {
            let y = g.concat_channels(&[v[0], v[1], v[0]])?;
            weighted_sum(g, y, 16)
        }),
        ("softmax_channels", vec![randn([2, 4, 2, 2], r)], |g, v| {
            let y = g.softmax_channels(v[0]);
            weighted_sum(g, y, 17)
        }),
        ("sum", vec![randn([2, 3, 2, 2], r)], |g, v| Ok(g.sum(v[0]))),
        ("cross_entropy", vec![randn([2, 3, 2, 2], r)], |g, v| g.cross_entropy(v[0], &[0, 1, 2, 2, 1, 0, 0, 1])),
    ]
}

/// Gradient checks of every graph operation.
pub fn primitive_checks(tol: f64) -> Result<Vec<CheckResult>> {
    primitive_cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = grad_check(f, &inputs, STEP)?;
            Ok(CheckResult { name: name.to_string(), tol, report })
        })
        .collect()
}

enum Target {
    Input(usize),
    Param(crate::params::ParamId),
}

/// Checks `loss(inputs, params)` with respect to the inputs and every
/// trainable parameter in `store`, with batch norms in training mode.
pub fn module_check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
{
    let (input_grads, param_grads) = {
        let mut sess = Session::new(store, Mode::Train);
        let vars: Vec<Var> = inputs.iter().map(|x| sess.graph.leaf(x.clone(), true)).collect();
        let out = loss(&mut sess, &vars)?;
        sess.graph.backward(out)?;
        let input_grads: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| sess.graph.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (input_grads, sess.take_gradients())
    };

    let mut targets = Vec::new();
    let mut analytic = Vec::new();
    for (i, g) in input_grads.into_iter().enumerate() {
        targets.push(Target::Input(i));
        analytic.push(g);
    }
    for (id, g) in store.ids().zip(param_grads) {
        if store.kind(id) == ParamKind::Trainable {
            targets.push(Target::Param(id));
            analytic.push(g.unwrap_or_else(|| Tensor::zeros(store.get(id).shape())));
        }
    }

    let mut work_store = store.clone();
    let mut work_inputs = inputs.to_vec();
    let slices: Vec<&[f64]> = analytic.iter().map(|t| t.data()).collect();
    central_differences(&slices, h, |i, j, offset| {
        let slot = match targets[i] {
            Target::Input(k) => &mut work_inputs[k].data_mut()[j],
            Target::Param(id) => &mut work_store.get_mut(id).data_mut()[j],
        };
        let base = *slot;
        *slot = base + offset;
        let value = {
            let mut sess = Session::with_grads(&work_store, Mode::Train, false);
            let vars: Vec<Var> = work_inputs.iter().map(|x| sess.input(x.clone())).collect();
            loss(&mut sess, &vars).map(|out| sess.graph.value(out).data()[0])
        };
        match targets[i] {
            Target::Input(k) => work_inputs[k].data_mut()[j] = base,
            Target::Param(id) => work_store.get_mut(id).data_mut()[j] = base,
        }
        value
    })
}

fn weighted(sess: &mut Session<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    weighted_sum(&mut sess.graph, out, seed)
}

/// Asymmetric conv block, channel attention block and two aggregation nodes.
pub fn block_checks(tol: f64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let r = &mut rng(21);

    let mut store = ParamStore::new();
    let acb = ConvBlock::new(&mut store, "acb", 3, 4, Branches::Asymmetric, r)?;
    let x = randn([2, 3, 5, 5], r);
    let report = module_check(&store, &[x], STEP, |s, v| {
        let y = acb.forward(s, v[0])?;
        weighted(s, y, 31)
    })?;
    out.push(CheckResult { name: "acb_forward".into(), tol, report });

    let mut store = ParamStore::new();
    let cab = ChannelAttention::new(&mut store, "cab", 6, 4, 2, r)?;
    let x = randn([2, 6, 4, 4], r);
    let report = module_check(&store, &[x], STEP, |s, v| {
        let y = cab.forward(s, v[0])?;
        weighted(s, y, 32)
    })?;
    out.push(CheckResult { name: "cab_forward".into(), tol, report });

    // Three levels: C = (2, 4, 8), D = (4, 8, 8).
    let encoder = [2, 4, 8];
    let decoder = [4, 8, 8];
    let widths = NodeWidths { encoder: &encoder, decoder: &decoder };
    let maps = [
        randn([2, 2, 8, 8], r),
        randn([2, 4, 4, 4], r),
        randn([2, 8, 2, 2], r),
        randn([2, 8, 4, 4], r),
        randn([2, 8, 2, 2], r),
    ];
    for level in [1, 2] {
        let mut store = ParamStore::new();
        let node = AggregateNode::new(&mut store, "node", level, widths, Branches::Asymmetric, 2, r)?;
        let report = module_check(&store, &maps, STEP, |s, v| {
            // v[3] is X_De^2, v[4] is X_De^3.
            let dec = if level == 1 { [v[3], v[4]].to_vec() } else { [v[4]].to_vec() };
            let y = node.forward(s, &v[..3], &dec)?;
            weighted(s, y, 33 + level as u64)
        })?;
        out.push(CheckResult { name: alloc::format!("aggregate_node_level{level}"), tol, report });
    }
    Ok(out)
}

/// Configuration of the end-to-end check: 3 levels, base width 4, 2 classes.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig::new(Variant::Macu, 3, 4, 2).with_ratio(4)
}

/// Cross-entropy of the tiny network on a 16×16 batch, checked against every parameter.
pub fn end_to_end_check(tol: f64) -> Result<CheckResult> {
    let net = Network::<f64>::build(tiny_config(), 41)?;
    let r = &mut rng(42);
    let x = Tensor::uniform(Shape::new(2, 3, 16, 16), 0.0, 1.0, r);
    let labels: Vec<usize> = (0..2 * 16 * 16).map(|_| r.gen_range(0..2)).collect();
    let report = module_check(net.store(), &[x], STEP, |s, v| {
        let logits = net.forward(s, v[0])?;
        s.graph.cross_entropy(logits, &labels)
    })?;
    Ok(CheckResult { name: "end_to_end".into(), tol, report })
}

/// Everything: primitives and blocks at `block_tol`, the network at `end_to_end_tol`.
pub fn gradient_suite(block_tol: f64, end_to_end_tol: f64) -> Result<Vec<CheckResult>> {
    let mut all = primitive_checks(block_tol)?;
    all.extend(block_checks(block_tol)?);
    all.push(end_to_end_check(end_to_end_tol)?);
    Ok(all)
}
