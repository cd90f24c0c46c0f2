use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a CLI command, mapped to a process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{pointer}`: {message}")]
    Config { pointer: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad input data: {0}")]
    Data(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { pointer: pointer.into(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 1 validation or run failure, 2 config error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
        }
    }
}

impl From<dsmo_core::metrics::MetricsError> for CliError {
    fn from(e: dsmo_core::metrics::MetricsError) -> Self {
        use dsmo_core::metrics::MetricsError as M;
        match e {
            M::Io(source) => CliError::Io { path: PathBuf::new(), source },
            M::Schema { .. } | M::Parse { .. } => CliError::Data(e.to_string()),
            M::InsufficientData(_) | M::NonPositiveValue { .. } => CliError::Failed(e.to_string()),
        }
    }
}
