//! Optimization, the training loop and segmentation metrics.

mod fit;
mod metrics;
mod optim;

pub use fit::{evaluate, fit, train_step, EpochLog, TrainConfig, TrainLog};
pub use metrics::{compute_metrics, ClassMetrics, ConfusionMatrix, Metrics};
pub use optim::{adam_step, cosine_lr, AdamConfig, OptimState};
