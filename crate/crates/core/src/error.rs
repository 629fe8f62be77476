use std::io;

/// Errors raised by the embedding, sampling and regression routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An oracle-scale routine was asked to materialize something too large.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A numerical failure; `stage` names the step that produced it.
    #[error("numerical failure in {stage}: {message}")]
    Numerical { stage: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(stage: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numerical {
            stage: stage.into(),
            message: msg.into(),
        }
    }
}
