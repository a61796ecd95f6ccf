use std::path::PathBuf;

use coalesce_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("finite-size guard: {0}")]
    Guard(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl CliError {
    /// Process exit code: 2 usage, 3 guard, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format { .. } | CliError::Io { .. } => 2,
            CliError::Guard(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), msg: msg.into() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_)
            | CoreError::AxisOutOfRange { .. }
            | CoreError::OverlappingColumns(_)
            | CoreError::InstantInvariant { .. }
            | CoreError::Budget(_) => CliError::Usage(e.to_string()),
            CoreError::Divergent { .. } | CoreError::Numerical(_) | CoreError::Inconclusive(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
