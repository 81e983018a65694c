//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the lines always reach stdout.

use std::time::Instant;

use macunet::checkpoint::{self, CheckpointError};
use macunet::core::blocks::{Branches, ConvBlock};
use macunet::core::data::{
    split_dataset, synth_generate, tile_grid, tile_sample, LabeledSample, Mask, RgbImage, DEFAULT_FRACTIONS,
};
use macunet::core::train::{
    compute_metrics, cosine_lr, evaluate, fit, train_step, AdamConfig, ConfusionMatrix, OptimState, TrainConfig,
};
use macunet::core::verify::{gradient_suite, BLOCK_TOL, END_TO_END_TOL};
use macunet::core::{Graph, Mode, Network, NetworkConfig, ParamStore, Scalar, Session, Tensor, Variant};
use macunet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    format!("error: {e}")
}

// 1 --------------------------------------------------------------------------

fn acb_draw<T: Scalar>(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.gen_range(1..6);
    let cout = rng.gen_range(1..6);
    let mut store = ParamStore::new();
    let block = ConvBlock::new(&mut store, "acb", cin, cout, Branches::Asymmetric, &mut rng).unwrap();
    let bn = block.params().unwrap().bn.clone();
    for (id, lo, hi) in
        [(bn.gamma, 0.5, 1.5), (bn.beta, -0.5, 0.5), (bn.running_mean, -0.3, 0.3), (bn.running_var, 0.2, 2.0)]
    {
        *store.get_mut(id) = Tensor::uniform([1, cout, 1, 1], lo, hi, &mut rng);
    }
    let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
    let x = Tensor::<T>::uniform([rng.gen_range(1..3), cin, h, w], -1.0, 1.0, &mut rng);
    let mut sess = Session::new(&store, Mode::Eval);
    let xv = sess.input(x.clone());
    let y = block.forward(&mut sess, xv).unwrap();
    let unfused = sess.graph.value(y).clone();
    let fused = block.fuse(&store).unwrap().forward(&x).unwrap();
    unfused.max_abs_diff(&fused).unwrap().as_f64()
}

fn fusion_equivalence() -> Outcome {
    let f64_err = (0..100).map(acb_draw::<f64>).fold(0.0, f64::max);
    let f32_err = (0..100).map(acb_draw::<f32>).fold(0.0, f64::max);

    let net = Network::<f32>::build(NetworkConfig::default(), 0).map_err(fail)?;
    let fused = net.fuse().map_err(fail)?;
    let images = synth_generate(20, 64, 6, 11);
    let (mut agree, mut total) = (0usize, 0usize);
    for chunk in images.chunks(5) {
        let x = Tensor::stack(
            &chunk.iter().map(|s| s.image.to_tensor::<f32>()).collect::<Vec<_>>().iter().collect::<Vec<_>>(),
        )
        .map_err(fail)?;
        let a = net.predict(&x).map_err(fail)?;
        let b = fused.predict(&x).map_err(fail)?;
        agree += a.iter().zip(&b).filter(|(p, q)| p == q).count();
        total += a.len();
    }
    let frac = agree as f64 / total as f64;
    check(
        f64_err < 1e-10 && f32_err < 1e-5 && frac >= 0.99,
        format!("ACB max err f64 {f64_err:.2e} (< 1e-10), f32 {f32_err:.2e} (< 1e-5); argmax agreement {agree}/{total} = {frac:.4} (>= 0.99)"),
    )
}

// 2 --------------------------------------------------------------------------

fn mac_ratio() -> Outcome {
    let mut blocks = 0;
    let mut bad = Vec::new();
    for v in [Variant::Macu, Variant::Acu] {
        let net = Network::<f32>::build(NetworkConfig { variant: v, ..NetworkConfig::default() }, 0).map_err(fail)?;
        for e in net.mac_report(256, 256).map_err(fail)? {
            if e.block {
                blocks += 1;
                if e.fused * 15 != e.branched * 9 {
                    bad.push(e.name);
                }
            }
        }
    }
    let mut out = Vec::new();
    let code = macunet::cli::run(["macunet", "bench", "--size", "64", "--reps", "1"], &mut out, &mut std::io::sink());
    let text = String::from_utf8_lossy(&out);
    let lines: Vec<_> = text.lines().filter(|l| l.contains("\tunfused=")).collect();
    let printed = code == 0 && !lines.is_empty() && lines.iter().all(|l| l.ends_with("ratio=9/15"));
    check(
        bad.is_empty() && blocks > 0 && printed,
        format!(
            "{blocks} ACB layers at 9/15 exactly, {} mismatched; bench printed {} layers at 9/15 (exit {code})",
            bad.len(),
            lines.len()
        ),
    )
}

// 3 --------------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let results = gradient_suite(BLOCK_TOL, END_TO_END_TOL).map_err(fail)?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let has = |p: &str| results.iter().any(|r| r.name.starts_with(p));
    let covered = ["acb_forward", "cab_forward", "aggregate_node", "end_to_end"].iter().all(|p| has(p));
    check(
        failed.is_empty() && covered,
        format!(
            "{}/{} checks pass (tol {BLOCK_TOL:e} / {END_TO_END_TOL:e}), worst rel err {worst:.2e}, failed {failed:?}",
            results.len() - failed.len(),
            results.len()
        ),
    )
}

// 4 --------------------------------------------------------------------------

fn counting_oracles() -> Outcome {
    let (w, h) = (7200, 6800);
    let big = LabeledSample::new(RgbImage::new(w, h), Mask::new(w, h), "scene").map_err(fail)?;
    let one = tile_sample(&big, 256).len();
    let mut fifteen = 0;
    for _ in 0..15 {
        fifteen += tile_sample(&big, 256).len();
    }
    drop(big);
    let (rows, cols) = tile_grid(w, h, 256);
    let stems: Vec<String> = (0..4940).map(|i| format!("img{i:04}")).collect();
    let counts = split_dataset(&stems, DEFAULT_FRACTIONS, 0).map_err(fail)?.counts();
    check(
        one == 728 && rows * cols == 728 && fifteen == 10920 && counts == (2964, 988, 988),
        format!("7200x6800 at 256 -> {one} patches (728), 15 images -> {fifteen} (10920); 4940 stems -> {counts:?} ((2964, 988, 988))"),
    )
}

// 5 --------------------------------------------------------------------------

fn parameter_accounting() -> Outcome {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ConvBlock::new(&mut store, "acb", 3, 16, Branches::Asymmetric, &mut rng).map_err(fail)?;
    let (cin, cout) = (3, 16);
    // 3×3, 1×3 and 3×1 kernels plus γ and β
    let hand = cout * cin * (9 + 3 + 3) + 2 * cout;
    let toy = store.trainable_count();

    const REPORTED: f64 = 5.152e6;
    let default = Network::<f32>::build(NetworkConfig::default(), 0).map_err(fail)?.count_params();
    let dev = default as f64 / REPORTED - 1.0;
    let swept_cfg = NetworkConfig { base_width: 15, cab_ratio: 1, ..NetworkConfig::default() };
    let swept = Network::<f32>::build(swept_cfg, 0).map_err(fail)?.count_params();
    let swept_dev = swept as f64 / REPORTED - 1.0;
    check(
        toy == hand && hand == 752 && dev.abs() <= 0.25,
        format!(
            "toy ACB {toy} (hand {hand}); default macu {default} vs 5.152M: {:+.2}% (within ±25%); base width 15 ratio 1: {swept} ({:+.2}%)",
            dev * 100.0,
            swept_dev * 100.0
        ),
    )
}

// 6 --------------------------------------------------------------------------

fn brute_force_counts(pred: &[usize], truth: &[usize], k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k * k];
    for t in 0..k {
        for p in 0..k {
            counts[t * k + p] = pred.iter().zip(truth).filter(|(&a, &b)| a == p && b == t).count() as u64;
        }
    }
    counts
}

fn brute_force_metrics(pred: &[usize], truth: &[usize], k: usize) -> [f64; 6] {
    let n = pred.len() as f64;
    let count = |f: &dyn Fn(usize, usize) -> bool| pred.iter().zip(truth).filter(|(&p, &t)| f(p, t)).count() as f64;
    let oa = count(&|p, t| p == t) / n;
    let (mut recalls, mut ious, mut f1s, mut pe, mut fw) = (vec![], vec![], vec![], 0.0, 0.0);
    for c in 0..k {
        let tp = count(&|p, t| p == c && t == c);
        let in_truth = count(&|_, t| t == c);
        let in_pred = count(&|p, _| p == c);
        pe += in_truth * in_pred / (n * n);
        if in_truth > 0.0 {
            recalls.push(tp / in_truth);
        }
        let union = count(&|p, t| p == c || t == c);
        if union > 0.0 {
            ious.push(tp / union);
            f1s.push(2.0 * tp / (in_truth + in_pred));
            fw += in_truth / n * tp / union;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    [oa, mean(&recalls), kappa, mean(&ious), fw, mean(&f1s)]
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut count_mismatch = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=32) * rng.gen_range(1..=32);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.accumulate(&pred, &truth).map_err(fail)?;
        let oracle = brute_force_counts(&pred, &truth, k);
        if (0..k).any(|t| (0..k).any(|p| cm.get(t, p) != oracle[t * k + p])) {
            count_mismatch += 1;
        }
        let m = compute_metrics(&cm).map_err(fail)?;
        for (got, want) in
            [m.oa, m.aa, m.kappa, m.miou, m.fwiou, m.f1].into_iter().zip(brute_force_metrics(&pred, &truth, k))
        {
            worst = worst.max((got - want).abs());
        }
    }

    // truth [0,0,0,1], pred [0,0,1,1]
    let hand = compute_metrics(&ConfusionMatrix::from_counts(2, vec![2, 1, 0, 1]).map_err(fail)?).map_err(fail)?;
    let expect = [0.75, 5.0 / 6.0, 0.5, 7.0 / 12.0, 0.625, (0.8 + 2.0 / 3.0) / 2.0];
    let hand_err = [hand.oa, hand.aa, hand.kappa, hand.miou, hand.fwiou, hand.f1]
        .iter()
        .zip(expect)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);

    let k = 6;
    let mut cm = ConfusionMatrix::new(k);
    let truth: Vec<usize> = (0..1_000_000).map(|_| rng.gen_range(0..k)).collect();
    let pred: Vec<usize> = (0..1_000_000).map(|_| rng.gen_range(0..k)).collect();
    cm.accumulate(&pred, &truth).map_err(fail)?;
    let mc = compute_metrics(&cm).map_err(fail)?;
    let oa_gap = (mc.oa - 1.0 / k as f64).abs();
    check(
        count_mismatch == 0 && worst < 1e-12 && hand_err < 1e-12 && oa_gap < 0.01 && mc.kappa.abs() < 0.01,
        format!(
            "1000 pairs: {count_mismatch} count mismatches, max metric diff {worst:.1e}; hand case err {hand_err:.1e}; 1e6 uniform pixels OA-1/6 {oa_gap:.4}, kappa {:.4}",
            mc.kappa
        ),
    )
}

// 7 --------------------------------------------------------------------------

fn overfit_miou(variant: Variant, data: &[LabeledSample]) -> Result<(f64, Vec<f64>), String> {
    let cfg = NetworkConfig::new(variant, 4, 8, 6);
    let mut net = Network::<f32>::build(cfg, 0).map_err(fail)?;
    let train = TrainConfig { epochs: 300, batch_size: 8, lr: 3e-4, lr_min: 0.0, seed: 0, adam: AdamConfig::default() };
    let log = fit(&mut net, data, &[], &train, &mut |_| {}).map_err(fail)?;
    let miou = compute_metrics(&evaluate(&net, data, 8).map_err(fail)?).map_err(fail)?.miou;
    Ok((miou, log.step_losses))
}

/// Non-increasing after a 30-step moving average; reported only.
fn smoothed_monotone(losses: &[f64]) -> bool {
    let avg: Vec<f64> = losses.windows(30).map(|w| w.iter().sum::<f64>() / 30.0).collect();
    avg.windows(2).all(|w| w[1] <= w[0] + 1e-3)
}

fn overfit_capacity() -> Outcome {
    let data = synth_generate(8, 64, 6, 0);
    let (macu, macu_losses) = overfit_miou(Variant::Macu, &data)?;
    let (unet, unet_losses) = overfit_miou(Variant::Unet, &data)?;
    check(
        macu >= 0.95 && unet >= 0.90,
        format!(
            "300 steps: macu train mIoU {macu:.4} (>= 0.95), unet {unet:.4} (>= 0.90); loss {:.3}->{:.3} / {:.3}->{:.3}, smoothed monotone {}/{}",
            macu_losses[0],
            macu_losses[macu_losses.len() - 1],
            unet_losses[0],
            unet_losses[unet_losses.len() - 1],
            smoothed_monotone(&macu_losses),
            smoothed_monotone(&unet_losses)
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn ablation_wiring() -> Outcome {
    let data = synth_generate(2, 32, 6, 3);
    let refs: Vec<_> = data.iter().collect();
    let mut counts = Vec::new();
    for v in Variant::ALL {
        let cfg = NetworkConfig::new(v, 4, 8, 6).with_ratio(8);
        let mut net = Network::<f32>::build(cfg, 0).map_err(fail)?;
        let before = net.store().clone();
        let mut state = OptimState::new(net.store(), AdamConfig::default());
        let loss = train_step(&mut net, &mut state, &refs, 3e-4).map_err(fail)?;
        if !loss.is_finite() || net.store() == &before {
            return Err(format!("{v}: one step left loss {loss} or parameters unchanged"));
        }
        counts.push((v, net.count_params()));
    }
    let of = |v: Variant| counts.iter().find(|(x, _)| *x == v).unwrap().1;
    let (u, uh, a) = (of(Variant::Unet), of(Variant::UnetH), of(Variant::Acu));
    let listing: Vec<String> = counts.iter().map(|(v, n)| format!("{v} {n}")).collect();
    check(
        u < uh && uh < a,
        format!("6 variants trained one step; {}; unet < unet_h < acu: {}", listing.join(", "), u < uh && uh < a),
    )
}

// 9 --------------------------------------------------------------------------

fn determinism_and_persistence() -> Outcome {
    let data = synth_generate(6, 16, 4, 2);
    let cfg = NetworkConfig::new(Variant::Macu, 3, 4, 4).with_ratio(4);
    let train = TrainConfig { epochs: 3, batch_size: 4, lr: 1e-3, seed: 9, ..TrainConfig::default() };
    let run = || -> Result<(String, Network<f32>), String> {
        let mut net = Network::<f32>::build(cfg, 9).map_err(fail)?;
        let log = fit(&mut net, &data[..4], &data[4..], &train, &mut |_| {}).map_err(fail)?;
        Ok((log.to_csv(), net))
    };
    let (csv_a, net) = run()?;
    let (csv_b, _) = run()?;

    let dir = tempfile::tempdir().map_err(fail)?;
    let (first, second) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    checkpoint::save(&net, &first).map_err(fail)?;
    let loaded: Network<f32> = checkpoint::load(&first, Some(&cfg)).map_err(fail)?;
    checkpoint::save(&loaded, &second).map_err(fail)?;
    let bytes = std::fs::read(&first).map_err(fail)?;
    let same_bytes = bytes == std::fs::read(&second).map_err(fail)?;

    let mut corrupt = bytes.clone();
    let at = corrupt.len() / 2;
    corrupt[at] ^= 0x10;
    let detected = matches!(
        checkpoint::decode::<f32>(&corrupt, Some(&cfg)),
        Err(Error::Checkpoint(CheckpointError::Integrity { .. }))
    );
    check(
        csv_a == csv_b && same_bytes && detected,
        format!(
            "training CSV identical: {} ({} bytes); save-load-save identical: {same_bytes} ({} bytes); flipped byte {at} detected: {detected}",
            csv_a == csv_b,
            csv_a.len(),
            bytes.len()
        ),
    )
}

// 10 -------------------------------------------------------------------------

fn schedule_and_loss_anchors() -> Outcome {
    let total = 300;
    let (start, end, mid) =
        (cosine_lr(3e-4, 0, total, 0.0), cosine_lr(3e-4, total, total, 0.0), cosine_lr(3e-4, total / 2, total, 0.0));
    let mut g = Graph::<f64>::new();
    let logits = g.input(Tensor::full([1, 6, 4, 4], 0.3));
    let loss = g.cross_entropy(logits, &[2; 16]).map_err(fail)?;
    let ce = g.value(loss).data()[0];
    let ce_err = (ce - 6f64.ln()).abs();
    check(
        start == 3e-4 && end == 0.0 && mid == 1.5e-4 && ce_err < 1e-9,
        format!("cosine_lr t=0 {start:e}, t=T {end:e}, t=T/2 {mid:e}; uniform CE K=6 off ln 6 by {ce_err:.1e}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("fusion equivalence", fusion_equivalence),
        ("MAC ratio", mac_ratio),
        ("gradient suite", gradient_checks),
        ("counting oracles", counting_oracles),
        ("parameter accounting", parameter_accounting),
        ("metric oracle", metric_oracle),
        ("overfit capacity", overfit_capacity),
        ("ablation wiring", ablation_wiring),
        ("determinism and persistence", determinism_and_persistence),
        ("schedule and loss anchors", schedule_and_loss_anchors),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {:>2}. {name}: {detail} [{secs:.1}s]", i + 1);
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
