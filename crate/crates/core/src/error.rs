use thiserror::Error;

/// Errors produced across the generation, characterization and metrics pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("degenerate channel: zero entry in realization {realization} (rx {rx}, tx {tx}, bin {bin})")]
    DegenerateChannel {
        realization: usize,
        rx: usize,
        tx: usize,
        bin: usize,
    },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined correlation: zero variance at coordinate {coordinate} ({label})")]
    UndefinedCorrelation { coordinate: usize, label: String },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
