use std::collections::BTreeSet;

use macunet_core::data::synth_generate;
use macunet_core::model::Decoder;
use macunet_core::train::{train_step, AdamConfig, OptimState};
use macunet_core::{Error, Network, NetworkConfig, ParamStore, Tensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(variant: Variant) -> NetworkConfig {
    NetworkConfig::new(variant, 4, 8, 6)
}

#[test]
fn every_variant_keeps_the_segmentation_contract() {
    let x = Tensor::<f32>::uniform([1, 3, 64, 64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    for v in Variant::ALL {
        let net = Network::<f32>::build(cfg(v), 0).unwrap();
        let y = net.forward_logits(&x, false, false).unwrap();
        assert_eq!(y.dims(), [1, 6, 64, 64], "{v}");
    }
}

#[test]
fn default_macu_node_widths() {
    let net = Network::<f32>::build(NetworkConfig::default(), 0).unwrap();
    let Decoder::MultiScale(nodes) = net.decoder() else { panic!("macu uses aggregation nodes") };
    let cab = nodes[2].attention.as_ref().unwrap();
    assert_eq!(nodes[2].level, 3);
    assert_eq!((cab.in_channels(), cab.out_channels()), (320, 128));
    assert_eq!(cab.compress_avg.out_channels, 8);
    for node in nodes {
        assert_eq!(node.down.len(), node.level - 1);
        assert_eq!(node.up.len(), 5 - node.level);
        assert_eq!(node.arity(), 5);
    }
}

#[test]
fn builds_are_deterministic_in_the_seed() {
    let a = Network::<f32>::build(cfg(Variant::Macu), 3).unwrap();
    let b = Network::<f32>::build(cfg(Variant::Macu), 3).unwrap();
    let c = Network::<f32>::build(cfg(Variant::Macu), 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.store(), c.store());
}

fn names(net: &Network<f32>, filter: impl Fn(&str) -> bool) -> BTreeSet<String> {
    net.store().entries().iter().map(|e| e.name.clone()).filter(|n| filter(n)).collect()
}

#[test]
fn unet_and_acu_share_batch_norm_names() {
    let unet = Network::<f32>::build(cfg(Variant::Unet), 0).unwrap();
    let acu = Network::<f32>::build(cfg(Variant::Acu), 0).unwrap();
    let bn = |n: &str| n.contains(".bn.");
    assert_eq!(names(&unet, bn), names(&acu, bn));
    let extra: BTreeSet<_> = names(&acu, |_| true).difference(&names(&unet, |_| true)).cloned().collect();
    assert!(extra.iter().all(|n| n.contains(".hor.") || n.contains(".ver.")), "{extra:?}");
}

#[test]
fn parameter_counts_order_the_ablations() {
    let count = |v| Network::<f32>::build(cfg(v), 0).unwrap().count_params();
    assert!(count(Variant::Unet) < count(Variant::UnetH));
    assert_eq!(count(Variant::UnetH), count(Variant::UnetV));
    assert!(count(Variant::UnetH) < count(Variant::Acu));
    assert!(count(Variant::Mu) < count(Variant::Macu));
}

#[test]
fn per_module_table_sums_to_the_total() {
    let net = Network::<f32>::build(NetworkConfig::default(), 0).unwrap();
    let table = net.param_table();
    assert_eq!(table.iter().map(|(_, c)| c).sum::<usize>(), net.count_params());
    assert_eq!(table.first().unwrap().0, "enc1");
    assert_eq!(table.last().unwrap(), &("head".to_string(), 16 * 2 * 6 + 6));
}

#[test]
fn single_conv_count() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    macunet_core::blocks::Conv::new(
        &mut store,
        "c",
        3,
        16,
        (3, 3),
        macunet_core::ops::ConvGeom::new(1, (1, 1)),
        true,
        &mut rng,
    )
    .unwrap();
    assert_eq!(store.trainable_count(), 448);
}

#[test]
fn every_variant_trains_one_step() {
    let data = synth_generate(2, 32, 6, 0);
    let refs: Vec<_> = data.iter().collect();
    for v in Variant::ALL {
        let mut net = Network::<f32>::build(cfg(v).with_ratio(8), 0).unwrap();
        let before = net.clone();
        let mut st = OptimState::new(net.store(), AdamConfig::default());
        let loss = train_step(&mut net, &mut st, &refs, 3e-4).unwrap();
        assert!(loss.is_finite() && loss > 0.0, "{v}: {loss}");
        assert_ne!(net.store(), before.store(), "{v}");
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let net = Network::<f32>::build(cfg(Variant::Macu), 0).unwrap();
    assert!(matches!(net.forward_logits(&Tensor::zeros([1, 3, 60, 64]), false, false), Err(Error::Shape(_))));
    assert!(matches!(net.forward_logits(&Tensor::zeros([1, 4, 64, 64]), false, false), Err(Error::Shape(_))));
    assert!(Network::<f32>::build(NetworkConfig { levels: 1, ..cfg(Variant::Unet) }, 0).is_err());
    assert!(Network::<f32>::build(cfg(Variant::Macu).with_ratio(5), 0).is_err());
}

#[test]
fn mac_report_has_nine_fifteenths_for_every_acb() {
    let net = Network::<f32>::build(NetworkConfig::default(), 0).unwrap();
    let report = net.mac_report(256, 256).unwrap();
    let blocks: Vec<_> = report.iter().filter(|e| e.block).collect();
    // two per encoder level, one per non-identity branch of the four nodes
    assert_eq!(blocks.len(), 10 + 4 * 4);
    for e in blocks {
        assert_eq!(e.fused * 15, e.branched * 9, "{}", e.name);
    }
}

#[test]
fn set_param_checks_shape() {
    let mut net = Network::<f32>::build(cfg(Variant::Unet), 0).unwrap();
    assert!(net.set_param("head.bias", Tensor::zeros([1, 6, 1, 1])).is_ok());
    assert!(net.set_param("head.bias", Tensor::zeros([1, 5, 1, 1])).is_err());
    assert!(matches!(net.set_param("nope", Tensor::zeros([1, 1, 1, 1])), Err(Error::UnknownParam(_))));
}
