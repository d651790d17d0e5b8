use std::path::PathBuf;

use crate::vocab::Fingerprint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file or record.
    #[error("format error: {0}")]
    Format(String),

    /// A token string or ID that does not exist in the vocabulary.
    #[error("reference error: {0}")]
    Reference(String),

    /// Text (or a token string) that the tokenizer cannot cover, or an
    /// embedding row that is missing for a required token.
    #[error("coverage error at byte {position}: {detail}")]
    Coverage { position: usize, detail: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("key fingerprint {key} does not match vocabulary fingerprint {vocab}")]
    Compatibility { key: Fingerprint, vocab: Fingerprint },

    /// Rendered alien text does not re-tokenize to the ID sequence it was
    /// rendered from.
    #[error("retokenization mismatch at token position {position}")]
    Stability { position: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Line {
        path: PathBuf,
        line: usize,
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

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
