//! Error type shared across the estimation engine.

use thiserror::Error;

/// Failure modes surfaced by the engine.
///
/// The split into configuration, data, and estimation-time failures mirrors
/// how callers are expected to react: fix the settings, fix the input file,
/// or treat the estimate as unavailable.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid settings: estimand parameters, fold counts, clip bounds, learner specs.
    #[error("configuration: {0}")]
    Config(String),
    /// Unusable input: parse failures, missing columns, empty arms, non-finite values.
    #[error("data: {0}")]
    Data(String),
    /// Estimation produced a degenerate quantity (zero denominator, singular
    /// system at the maximum ridge penalty, persistent separation).
    #[error("degenerate: {0}")]
    Degenerate(String),
    /// An iterative fit ran out of iterations.
    #[error("no convergence after {iterations} iterations (last deviance {last_deviance:.6e})")]
    Convergence {
        iterations: usize,
        last_deviance: f64,
    },
    /// A function was evaluated outside its domain.
    #[error("domain: {0}")]
    Domain(String),
    /// A failure attached to one cross-fitting fold.
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn fold(fold: usize, source: Error) -> Self {
        Error::Fold {
            fold,
            source: Box::new(source),
        }
    }
}
