//! Optimization, training, evaluation and the batch-size sweep.

pub mod metrics;
pub mod optim;
pub mod sweep;
pub mod train;

pub use metrics::{evaluate, metrics_from_predictions, MetricsReport};
pub use optim::{optimizer_step, OptimConfig, OptimizerKind, OptimizerState};
pub use sweep::{sweep_batch_size, RunKey, RunRecord, SweepConfig, SweepReport};
pub use train::{
    derive_seed, train, train_from_config, train_observed, EpochRecord, LossKind, RegularizerKind,
    TrainConfig, TrainOutcome,
};
