use std::path::Path;

use thiserror::Error;

/// Failure of a pipeline stage, carrying the process exit code class.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub fn missing(path: &Path, stage: &str) -> Self {
        CliError::Data(format!("missing upstream artifact {} (run `losstrace {stage}` first)", path.display()))
    }
}

impl From<losstrace::Error> for CliError {
    fn from(err: losstrace::Error) -> Self {
        match err {
            losstrace::Error::Config(msg) => CliError::Usage(format!("config error: {msg}")),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
