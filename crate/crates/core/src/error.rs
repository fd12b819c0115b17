use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structural rule of the regression model was violated.
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("ill-conditioned regressor: {0}")]
    Conditioning(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("split protocol error: {0}")]
    Protocol(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("malformed gallery file: {0}")]
    Format(String),

    /// The online and fast residual paths disagreed beyond tolerance.
    #[error("correctness gate failed: {0}")]
    Correctness(String),

    #[error("class `{class_id}`: {source}")]
    Class {
        class_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_class(self, class_id: &str) -> Self {
        Error::Class {
            class_id: class_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
