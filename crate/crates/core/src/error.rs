use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor handed to a graph constructor has the wrong shape.
    #[error("shape mismatch for `{name}`: expected {expected}, got {actual}")]
    Shape {
        name: String,
        expected: String,
        actual: String,
    },

    #[error("input node `{0}` has no value assigned")]
    UnassignedInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged in stage {stage} epoch {epoch}: {detail}")]
    Divergence {
        stage: String,
        epoch: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        name: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            name: name.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
