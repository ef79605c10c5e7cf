use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: i/o error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate edge {caller} -> {callee} @ {offset}")]
    DuplicateEdge {
        line: usize,
        caller: String,
        callee: String,
        offset: u64,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("length error: expected {expected} bytes of payload, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("index error: {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("edge {ordinal}: {source}")]
    AtEdge {
        ordinal: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_edge(ordinal: usize, source: Error) -> Self {
        Error::AtEdge {
            ordinal,
            source: Box::new(source),
        }
    }

    /// The innermost error, skipping ordinal context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtEdge { source, .. } => source.root(),
            other => other,
        }
    }
}
