use thiserror::Error;

/// Errors raised by the optimizers and their building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An objective value (or a direction fed to an accumulator) was NaN or otherwise unusable.
    #[error("invalid evaluation: {0}")]
    InvalidEvaluation(String),

    /// The search distribution lost positive definiteness or a whitening matrix is singular.
    #[error("numerical degeneracy: {0}")]
    Degeneracy(String),

    /// A ratio estimate (SNR, correlation) has no defined value yet.
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
