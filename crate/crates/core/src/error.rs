use thiserror::Error;

use crate::em::ParamState;
use crate::nested::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("optimizer hit the iteration limit ({iterations} iterations)")]
    MaxIterations { iterations: usize, best: Vec<f64> },

    #[error("line search could not improve the objective: {0}")]
    LineSearchFailure(String),

    #[error("infeasible parameter: {0}")]
    Infeasible(String),

    #[error("non-finite likelihood: {0}")]
    NonFiniteLikelihood(String),

    #[error("EM did not converge in {iterations} iterations")]
    EmNonConvergence { iterations: usize, best: ParamState },

    #[error("smoothing-parameter loop did not converge in {iterations} iterations")]
    OuterNonConvergence { iterations: usize, best: Box<FitResult> },

    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    #[error("bootstrap unreliable: {failed} of {total} resamples failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that come from the numerics rather than from input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Domain(_)
                | Error::Parse { .. }
                | Error::InvalidData(_)
                | Error::Dimension { .. }
                | Error::Io(_)
        )
    }
}
