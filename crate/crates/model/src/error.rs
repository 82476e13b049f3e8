use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    /// Shapes or arguments outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Missing or conflicting arguments for an operation.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training hit a non-finite loss or gradient; the step was not applied.
    #[error("training error: {0}")]
    Training(String),

    #[error("{}: bad checkpoint: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] cubepano::Error),
}

impl ModelError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        ModelError::Domain(msg.into())
    }

    pub fn is_io(&self) -> bool {
        match self {
            ModelError::Io { .. } | ModelError::Checkpoint { .. } => true,
            ModelError::Core(e) => e.is_io(),
            _ => false,
        }
    }
}
