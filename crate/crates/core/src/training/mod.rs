//! Adam with linear decay, MLM pretraining, fine-tuning and metrics.

mod config;
mod curve;
mod loops;
mod metrics;
mod optim;

pub use config::{CheckpointSelection, InitMode, TrainConfig};
pub use curve::LossCurve;
pub use loops::{
    finetune, metrics_for, predict, pretrain_mlm, score, subset_indices, FinetuneOutcome,
    PretrainOutcome, Splits,
};
pub use metrics::{
    accuracy, average_ranks, confusion, evaluate, f1, mcc, pearson, spearman, write_metrics_csv,
    MetricKind, MetricReport, Predictions,
};
pub use optim::{adam_step, OptimState};
