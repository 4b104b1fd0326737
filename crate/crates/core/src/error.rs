use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates a documented precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative numerical routine failed.
    #[error("numeric error: {message}")]
    Numeric {
        message: String,
        /// Offending index (root number, matrix column, ...) when one exists.
        index: Option<usize>,
        /// Condition estimate of the system involved, when one exists.
        cond_estimate: Option<f64>,
    },

    /// Measure nodes fall outside the observable window `[-L, R]`.
    #[error("support error: {count} node(s) outside [{lo}, {hi}]: {offending:?}")]
    Support {
        lo: f64,
        hi: f64,
        count: usize,
        offending: Vec<f64>,
    },

    /// Two arrays that must align have different lengths.
    #[error("shape error: expected length {expected}, got {actual} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A filtered spectrum contained no peak (identically zero input).
    #[error("no peak: {0}")]
    NoPeak(String),

    /// The rate-estimation stage produced no usable estimate.
    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            index: None,
            cond_estimate: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
