use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("no well-formed interactions in input ({malformed} malformed lines)")]
    EmptyInput { malformed: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("cannot sample a negative item: user has interacted with all {items} items")]
    Sampling { items: usize },

    #[error("training diverged at epoch {epoch}, sample {sample}: non-finite loss")]
    Divergence { epoch: usize, sample: usize },

    #[error("every grid cell failed; last error: {0}")]
    GridFailure(Box<Error>),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what,
            expected,
            actual,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 2,
            Error::Io(_) | Error::EmptyInput { .. } | Error::Sampling { .. } | Error::Format(_) => 3,
            Error::Divergence { .. } => 4,
            Error::GridFailure(inner) => inner.exit_code(),
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
