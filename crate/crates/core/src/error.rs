use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance undefined for fewer than two observations")]
    CovarianceUndefined,

    #[error("unsupported exponent p = {0}; only p = 2 is implemented")]
    UnsupportedExponent(u32),

    #[error("zero propensity on observed arm at row {row}")]
    ZeroPropensity { row: usize },

    #[error("policy has no overlap with logged actions")]
    NoOverlap,

    #[error("arms never observed: {0:?}")]
    MissingArms(Vec<usize>),

    #[error("insufficient data for arm {arm}: need {needed}, have {have}")]
    InsufficientArmData { arm: usize, needed: usize, have: usize },

    #[error("QP did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// Best feasible iterate found before giving up.
        best: Vec<f64>,
    },

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("Cholesky factorization failed after ridge retry")]
    CholeskyFailed,

    #[error("no restart produced a finite objective")]
    AllRestartsFailed,
}

impl Error {
    /// True for failures of a numerical routine as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Singular(_)
                | Error::CholeskyFailed
                | Error::AllRestartsFailed
        )
    }
}
