use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model evaluation failed at observation {index}: {reason}")]
    Model { index: usize, reason: String },
    #[error("model output is not finite at observation {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        last: Box<DMatrix<f64>>,
    },
    #[error("all importance weights are zero")]
    DegenerateWeights,
    #[error("chain {index} is degenerate: {reason}")]
    DegenerateChain { index: usize, reason: String },
    #[error("sample store has no residual block for iteration {iteration}, sample {sample}")]
    MissingResiduals { iteration: usize, sample: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }
}
