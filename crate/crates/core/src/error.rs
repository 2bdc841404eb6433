use thiserror::Error;

/// Errors produced by the simulation and analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation outside the domain of a function (e.g. a singular kernel at 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// An operation that is not available for the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A discretization that does not converge at the requested step.
    #[error("step refinement required: {0}")]
    StepRefinement(String),

    /// A hypothesis check failed on its probe set.
    #[error("hypothesis check failed ({condition}): {detail}")]
    Hypothesis { condition: String, detail: String },

    /// Expression DSL parse failure.
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn hypothesis(condition: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Hypothesis {
            condition: condition.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
