use thiserror::Error;

/// Errors produced by the numerics kernel, the editors and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not symmetric: ||m - m^T||_F = {deviation:e} exceeds {tolerance:e}")]
    Asymmetry { deviation: f64, tolerance: f64 },

    #[error("singular system: pivot magnitude {pivot:e} below {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("gradient descent diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("method {method} failed at step {step}: {source}")]
    Solver {
        method: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dimension(
        op: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
