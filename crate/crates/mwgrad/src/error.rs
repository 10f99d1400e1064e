//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by constructors, estimators and the optimizer loop.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition (shape mismatch,
    /// non-positive step size, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The variational training loop produced a non-finite objective.
    #[error("variational training diverged at step {step}")]
    TrainingDiverged { step: usize },

    /// A recovered critic value left its admissible numeric domain.
    #[error("numeric domain violation: {0}")]
    NumericDomain(String),

    /// The min-norm solver hit its iteration cap; `best` is the last iterate.
    #[error("min-norm solve did not converge (best objective {value:.6e})")]
    MinNormDidNotConverge { best: Vec<f64>, value: f64 },

    /// A particle left the admissible region during optimization.
    #[error("particle {particle} diverged at iteration {iteration}")]
    Diverged { iteration: usize, particle: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
