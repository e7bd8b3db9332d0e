use thiserror::Error;

/// Errors raised by the readout library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty histogram source")]
    EmptySource,

    #[error("trace has {available} sub-bins but {requested} were requested")]
    TraceTooShort { requested: usize, available: usize },

    #[error("classifier failed on stream {stream_id}: {message}")]
    Campaign { stream_id: u64, message: String },

    #[error("generator is not a valid rate matrix: {0}")]
    NotStochastic(String),

    #[error("{0}")]
    Io(String),
}

impl ReadoutError {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        ReadoutError::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for ReadoutError {
    fn from(err: std::io::Error) -> Self {
        ReadoutError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ReadoutError>;
