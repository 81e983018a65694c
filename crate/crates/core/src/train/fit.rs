use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{compute_metrics, ConfusionMatrix};
use super::optim::{adam_step, cosine_lr, AdamConfig, OptimState};
use crate::data::{batch, LabeledSample};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::params::{Mode, Session};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 8, lr: 3e-4, lr_min: 0.0, seed: 0, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1))
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Steps completed so far.
    pub step: u64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// `None` when no validation set is given.
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    /// CSV with header `epoch,step,lr,train_loss,val_miou`.
    pub fn to_csv(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut out = alloc::string::String::from("epoch,step,lr,train_loss,val_miou\n");
        for e in &self.epochs {
            let val = e.val_miou.map(|v| alloc::format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.9e},{:.9},{}", e.epoch, e.step, e.lr, e.train_loss, val);
        }
        out
    }
}

/// Forward, cross-entropy, backward and one Adam update on a batch. Returns the loss.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    state: &mut OptimState<T>,
    samples: &[&LabeledSample],
    lr: f64,
) -> Result<f64> {
    let (x, labels) = batch::<T>(samples)?;
    let (loss, grads, stats) = {
        let mut sess = Session::new(net.store(), Mode::Train);
        let input = sess.input(x);
        let logits = net.forward(&mut sess, input)?;
        let loss = sess.graph.cross_entropy(logits, &labels)?;
        sess.graph.backward(loss)?;
        let value = sess.graph.value(loss).data()[0].as_f64();
        let grads = sess.take_gradients();
        (value, grads, sess.into_stat_updates())
    };
    adam_step(net.store_mut(), &grads, state, lr)?;
    net.store_mut().apply_stat_updates(&stats);
    Ok(loss)
}

/// Inference-mode confusion matrix over `samples`.
pub fn evaluate<T: Scalar>(net: &Network<T>, samples: &[LabeledSample], batch_size: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.config().classes);
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (x, labels) = batch::<T>(chunk)?;
        let pred = net.predict(&x)?;
        cm.accumulate(&pred, &labels)?;
    }
    Ok(cm)
}

/// Mini-batch Adam with a per-step cosine schedule over the whole run.
/// `on_epoch` sees every log row as soon as it is complete.
pub fn fit<T: Scalar>(
    net: &mut Network<T>,
    train: &[LabeledSample],
    val: &[LabeledSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let total = (cfg.epochs * cfg.steps_per_epoch(train.len())) as u64;
    let mut state = OptimState::new(net.store(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        let mut lr = cfg.lr;
        for idx in order.chunks(cfg.batch_size) {
            let samples: Vec<&LabeledSample> = idx.iter().map(|&i| &train[i]).collect();
            lr = cosine_lr(cfg.lr, step, total, cfg.lr_min);
            let loss =
                train_step(net, &mut state, &samples, lr).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
            log.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let val_miou =
            if val.is_empty() { None } else { Some(compute_metrics(&evaluate(net, val, cfg.batch_size)?)?.miou) };
        let row = EpochLog { epoch, step, lr, train_loss: epoch_loss / batches as f64, val_miou };
        on_epoch(&row);
        log.epochs.push(row);
    }
    Ok(log)
}
