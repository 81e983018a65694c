use macunet_core::blocks::{Branches, ConvBlock};
use macunet_core::data::synth_generate;
use macunet_core::{Mode, Network, NetworkConfig, ParamStore, Scalar, Session, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A block with random kernels and random (but valid) batch-norm state.
fn random_block<T: Scalar>(seed: u64, branches: Branches) -> (ParamStore<T>, ConvBlock, Tensor<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.gen_range(1..5);
    let cout = rng.gen_range(1..6);
    let mut store = ParamStore::new();
    let block = ConvBlock::new(&mut store, "b", cin, cout, branches, &mut rng).unwrap();
    let bn = block.params().unwrap().bn.clone();
    for (id, lo, hi) in
        [(bn.gamma, 0.5, 1.5), (bn.beta, -0.5, 0.5), (bn.running_mean, -0.3, 0.3), (bn.running_var, 0.2, 2.0)]
    {
        *store.get_mut(id) = Tensor::uniform([1, cout, 1, 1], lo, hi, &mut rng);
    }
    let h = rng.gen_range(1..7);
    let w = rng.gen_range(1..7);
    let x = Tensor::uniform([rng.gen_range(1..3), cin, h, w], -1.0, 1.0, &mut rng);
    (store, block, x)
}

fn max_fusion_error<T: Scalar>(seed: u64, branches: Branches) -> f64 {
    let (store, block, x) = random_block::<T>(seed, branches);
    let mut sess = Session::new(&store, Mode::Eval);
    let xv = sess.input(x.clone());
    let y = block.forward(&mut sess, xv).unwrap();
    let unfused = sess.graph.value(y).clone();
    let fused = block.fuse(&store).unwrap().forward(&x).unwrap();
    unfused.max_abs_diff(&fused).unwrap().as_f64()
}

#[test]
fn acb_fusion_is_exact_in_f64() {
    let worst = (0..100).map(|s| max_fusion_error::<f64>(s, Branches::Asymmetric)).fold(0.0, f64::max);
    assert!(worst < 1e-10, "max |fused - unfused| = {worst:e}");
}

#[test]
fn acb_fusion_in_f32() {
    let worst = (0..100).map(|s| max_fusion_error::<f32>(s, Branches::Asymmetric)).fold(0.0, f64::max);
    assert!(worst < 1e-5, "max |fused - unfused| = {worst:e}");
}

#[test]
fn two_branch_and_square_blocks_fuse_too() {
    for b in [Branches::Square, Branches::SquareHorizontal, Branches::SquareVertical] {
        let worst = (0..20).map(|s| max_fusion_error::<f64>(s, b)).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{b:?}: {worst:e}");
    }
}

fn small_macu() -> Network<f64> {
    Network::build(NetworkConfig::new(Variant::Macu, 3, 4, 3).with_ratio(4), 2).unwrap()
}

#[test]
fn network_fusion_only_renames_block_internals() {
    let net = small_macu();
    let fused = net.fuse().unwrap();
    assert!(fused.is_fused());
    assert!(fused.count_params() <= net.count_params());
    let names = |n: &Network<f64>| -> Vec<String> { n.store().entries().iter().map(|e| e.name.clone()).collect() };
    let internal = |name: &str| [".sq.", ".hor.", ".ver.", ".bn.", ".fused."].iter().any(|p| name.contains(p));
    let kept: Vec<_> = names(&net).into_iter().filter(|n| !internal(n)).collect();
    let kept_fused: Vec<_> = names(&fused).into_iter().filter(|n| !internal(n)).collect();
    assert_eq!(kept, kept_fused);
    for n in names(&fused) {
        assert!(!n.contains(".sq.") && !n.contains(".bn."), "{n} survived fusion");
    }
}

#[test]
fn fused_network_matches_unfused_inference() {
    let net = small_macu();
    let fused = net.fuse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f64>::uniform([2, 3, 16, 16], 0.0, 1.0, &mut rng);
    let a = net.forward_logits(&x, false, false).unwrap();
    let b = fused.forward_logits(&x, false, false).unwrap();
    let c = net.forward_logits(&x, false, true).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    assert_eq!(b, c);
}

#[test]
fn fused_training_is_rejected() {
    let net = small_macu();
    let x = Tensor::<f64>::zeros([1, 3, 16, 16]);
    assert!(net.forward_logits(&x, true, true).is_err());
    assert!(net.fuse().unwrap().forward_logits(&x, true, false).is_err());
}

#[test]
fn fused_f32_argmax_agrees_on_synthetic_images() {
    let net = Network::<f32>::build(NetworkConfig::new(Variant::Macu, 3, 8, 6).with_ratio(8), 5).unwrap();
    let fused = net.fuse().unwrap();
    let data = synth_generate(4, 32, 6, 1);
    let (mut same, mut total) = (0, 0);
    for s in &data {
        let x = s.image.to_tensor::<f32>();
        let a = net.predict(&x).unwrap();
        let b = fused.predict(&x).unwrap();
        same += a.iter().zip(&b).filter(|(p, q)| p == q).count();
        total += a.len();
    }
    assert!(same as f64 >= 0.99 * total as f64, "{same}/{total}");
}

#[test]
fn default_f32_logits_agree_relative_to_their_scale() {
    let net = Network::<f32>::build(NetworkConfig::default(), 0).unwrap();
    let x = synth_generate(1, 64, 6, 3)[0].image.to_tensor::<f32>();
    let a = net.forward_logits(&x, false, false).unwrap();
    let b = net.forward_logits(&x, false, true).unwrap();
    let scale = a.data().iter().fold(0f32, |m, v| m.max(v.abs()));
    let rel = a.max_abs_diff(&b).unwrap() / scale;
    assert!(rel < 1e-4, "max diff {} at logit scale {scale}", rel * scale);
}
