use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message} at byte {offset}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("refinement diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(camforge_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Format { .. } | CliError::Usage(_) => 2,
            CliError::Shape(_) => 3,
            CliError::Empty(_) => 4,
            CliError::Divergence { .. } => 5,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                camforge_core::Error::Dimension(_) => 3,
                camforge_core::Error::EmptyForeground => 4,
                camforge_core::Error::Divergence { .. } => 5,
                _ => 2,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<camforge_core::Error> for CliError {
    fn from(e: camforge_core::Error) -> Self {
        match e {
            camforge_core::Error::Dimension(m) => CliError::Shape(m),
            camforge_core::Error::Divergence { iteration } => CliError::Divergence { iteration },
            other => CliError::Core(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
