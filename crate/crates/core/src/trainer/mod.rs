//! Desk-scale data generation and MLP training with per-epoch loss capture.

pub mod dataset;
pub mod dp;
pub mod metrics;
pub mod mlp;
pub mod train;

pub use dataset::{generate_synthetic, GenerationSpec, ToyDataset};
pub use dp::{dp_step_modifier, GradientAccumulator};
pub use metrics::{per_sample_metrics, BaselineScores};
pub use mlp::Mlp;
pub use train::{config_digest, random_half_mask, setup_digest, train, train_shadows, LrSchedule, TrainConfig, TrainSummary, TrainedRun};
