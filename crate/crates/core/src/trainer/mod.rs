//! AdamW optimization with parameter freezing, preference pair sampling,
//! checkpoints and trainable-parameter accounting.

pub mod adamw;
pub mod checkpoint;
pub mod pairs;
pub mod train;

pub use adamw::{adamw_step, adamw_update, clip_global_norm, AdamWHyper, Moments, OptimizerState};
pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use pairs::{sample_pairs, PairConfig};
pub use train::{
    load_run, resume, train, trainable_fraction, write_metrics_csv, LrSchedule, MetricsRow, Objective, TrainConfig, TrainData,
    TrainOutcome, METRICS_HEADER,
};
