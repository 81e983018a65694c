use macunet_core::train::{adam_step, compute_metrics, cosine_lr, AdamConfig, ConfusionMatrix, OptimState};
use macunet_core::{Graph, ParamKind, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let mut g = Graph::new();
    let v = g.input(logits.clone());
    let loss = g.cross_entropy(v, labels).unwrap();
    g.value(loss).data()[0]
}

#[test]
fn uniform_logits_give_log_k() {
    let loss = cross_entropy(&Tensor::full([2, 6, 3, 3], 0.7), &[4; 18]);
    assert!((loss - 6f64.ln()).abs() < 1e-9);
}

#[test]
fn confident_logits_give_near_zero_loss() {
    let labels = [0, 2, 1, 1];
    let mut t = Tensor::<f64>::zeros([1, 3, 2, 2]);
    for (p, &c) in labels.iter().enumerate() {
        *t.at_mut(0, c, p / 2, p % 2) = 20.0;
    }
    assert!(cross_entropy(&t, &labels) < 1e-6);
}

#[test]
fn cross_entropy_matches_scalar_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Tensor::<f64>::uniform([1, 3, 2, 2], -3.0, 3.0, &mut rng);
    let labels = [2, 0, 1, 2];
    let mut expect = 0.0;
    for (p, &y) in labels.iter().enumerate() {
        let z: Vec<f64> = (0..3).map(|c| t.at(0, c, p / 2, p % 2)).collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        expect -= (z[y].exp() / denom).ln();
    }
    expect /= 4.0;
    assert!((cross_entropy(&t, &labels) - expect).abs() < 1e-10);
}

#[test]
fn out_of_range_label_is_rejected() {
    let mut g = Graph::new();
    let v = g.input(Tensor::<f64>::zeros([1, 2, 1, 1]));
    assert!(g.cross_entropy(v, &[2]).is_err());
}

#[test]
fn adam_follows_scalar_oracle_on_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::scalar(1.0f64), ParamKind::Trainable).unwrap();
    let mut st = OptimState::new(&store, AdamConfig::default());
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let g = theta; // d/dθ θ²/2
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);

        let grad = store.get(id).clone();
        adam_step(&mut store, &[Some(grad)], &mut st, lr).unwrap();
        assert!((store.get(id).data()[0] - theta).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn schedule_is_monotone_and_bounded() {
    let total = 300;
    let lrs: Vec<f64> = (0..=total).map(|t| cosine_lr(3e-4, t, total, 1e-5)).collect();
    assert_eq!(lrs[0], 3e-4);
    assert!((lrs[total as usize] - 1e-5).abs() < 1e-18);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

/// Independent per-pixel counting, written without the matrix type.
fn brute_force(pred: &[usize], truth: &[usize], k: usize) -> (f64, f64, f64, f64, f64, f64) {
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
    (oa, mean(&recalls), kappa, mean(&ious), fw, mean(&f1s))
}

#[test]
fn metrics_match_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=32) * rng.gen_range(1..=32);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.accumulate(&pred, &truth).unwrap();
        let m = compute_metrics(&cm).unwrap();
        let (oa, aa, kappa, miou, fwiou, f1) = brute_force(&pred, &truth, k);
        for (got, want) in [(m.oa, oa), (m.aa, aa), (m.kappa, kappa), (m.miou, miou), (m.fwiou, fwiou), (m.f1, f1)] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn uniform_guessing_has_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 6;
    let truth: Vec<usize> = (0..1_000_000).map(|_| rng.gen_range(0..k)).collect();
    let pred: Vec<usize> = (0..1_000_000).map(|_| rng.gen_range(0..k)).collect();
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(&pred, &truth).unwrap();
    let m = compute_metrics(&cm).unwrap();
    assert!((m.oa - 1.0 / k as f64).abs() < 0.01);
    assert!(m.kappa.abs() < 0.01);
}
