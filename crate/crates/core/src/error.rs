use thiserror::Error;

/// Errors raised by the statistics, scoring, attack, evaluation and training code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate regression: need at least 2 epochs, got {0}")]
    DegenerateRegression(usize),

    #[error("degenerate ROC: {0}")]
    DegenerateRoc(String),

    #[error("constant ranking: rank variance is zero")]
    ConstantRanking,

    #[error("no vulnerable points at alpha = {0}")]
    NoVulnerablePoints(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid trace set: {0}")]
    InvalidTraces(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown sample id {0:?}")]
    UnknownSample(String),

    #[error("training diverged at epoch {epoch} (sample {sample}): loss = {loss}")]
    Divergence { epoch: usize, sample: String, loss: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures caused by numerics (divergence, degenerate statistics)
    /// rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::NonFinite(_)
                | Error::DegenerateRegression(_)
                | Error::DegenerateRoc(_)
                | Error::ConstantRanking
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
