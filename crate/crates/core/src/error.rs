use thiserror::Error;

use crate::experiment::EpochRecord;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("loss is identically zero on the dataset; normalized fit is undefined")]
    ZeroLoss,

    #[error("infinite risk: loss is unbounded on the evaluated distribution")]
    InfiniteRisk,

    #[error(
        "feature vector at dataset entry {0} is not in the support of the reference distribution"
    )]
    OutsideSupport(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("too many numerically zero Dirichlet draws: {resampled} of {draws}")]
    ZeroDraws { resampled: usize, draws: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        records: Vec<EpochRecord>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
