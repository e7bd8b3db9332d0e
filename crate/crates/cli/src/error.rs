use ion_readout::ReadoutError;
use thiserror::Error;

/// Failure classes, mapped to exit status 2 (configuration) and 3 (runtime).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(err: ReadoutError) -> Self {
        CliError::Config(err.to_string())
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ReadoutError> for CliError {
    fn from(err: ReadoutError) -> Self {
        CliError::Runtime(err.to_string())
    }
}
