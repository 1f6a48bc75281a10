//! CLI error type with the process exit-code contract:
//! 0 success, 1 I/O, 2 usage, 3 numeric failure.

use pfdfl_core::Error as CoreError;

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            // mid-run engine failures are numeric failures
            CoreError::NonFinite { .. } | CoreError::ShapeMismatch { .. } => {
                CliError::Numeric(e.to_string())
            }
            // unreadable or mismatched files
            CoreError::Checkpoint { .. } => CliError::Io(e.to_string()),
            // bad arguments, bad data, bad analysis requests
            CoreError::InvalidArgument { .. }
            | CoreError::Vocabulary { .. }
            | CoreError::Data { .. }
            | CoreError::Analysis { .. } => CliError::Usage(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
