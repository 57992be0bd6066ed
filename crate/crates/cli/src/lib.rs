//! Batch pipeline around the `losstrace` library: experiment configs,
//! on-disk formats, pipeline stages and SVG reports.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod plot;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, Result};
