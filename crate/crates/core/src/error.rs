use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "{source_name}: malformed JSON at byte {offset} (line {line}, column {column}): {message}"
    )]
    Parse {
        source_name: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{source_name}: schema error: {message}")]
    Schema {
        source_name: String,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsatisfiable synthetic spec: {0}")]
    Unsatisfiable(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
