//! Loss-trace vulnerability scores for membership inference.
//!
//! Per-sample loss traces recorded during training are reduced to a single
//! risk score (LT-IQR and related aggregators) and compared against
//! shadow-model attacks (LOSS, LiRA, Attack R, RMIA) with precision/recall at
//! k over the set of points an attack flags at a fixed false positive rate.

pub mod aggregators;
pub mod attacks;
pub mod error;
pub mod evaluation;
pub mod stats;
pub mod trainer;
pub mod types;

pub use aggregators::AggregatorSpec;
pub use attacks::{AttackConfig, AttackKind};
pub use error::{Error, Result};
pub use types::{DpSettings, RunManifest, ScoreVector, ShadowPanel, TraceSet, VulnerableSet};
