//! Configuration, training loop, checkpoints, frozen export and evaluation.

pub mod config;
pub mod eval;
pub mod frozen;
pub mod train;

pub use config::TrainConfig;
pub use eval::{evaluate, rollout_frozen, write_report, write_trace_csv, EvalReport, RolloutSummary, Scenario};
pub use frozen::{export_policy, load_frozen, FrozenPolicy};
pub use train::{gen_clips, train, Checkpoint, IterationMetrics, TrainSummary};
