use std::path::{Path, PathBuf};

use gpmpc_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    BadInput(String),

    #[error("{0}")]
    NoPath(String),

    #[error("solver did not converge on {steps} step(s); outputs were still written")]
    NotConverged { steps: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 2 bad input, 3 no path or non-convergence, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::NoPath(_) | CliError::NotConverged { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches the offending file to a core error.
    pub(crate) fn core_at(path: &Path, err: CoreError) -> Self {
        match err {
            CoreError::Io(source) => Self::io(path, source),
            other => CliError::BadInput(format!("{}: {other}", path.display())),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::NoPathFound { .. } => CliError::NoPath(err.to_string()),
            CoreError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::BadInput(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
