use thiserror::Error;

/// Errors raised by the low-rank transport library.
#[derive(Debug, Error)]
pub enum DboError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (species count {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("time mismatch: {0}")]
    TimeMismatch(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("observer failed at t = {t}: {msg}")]
    Observer { t: f64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DboError>;
