use std::path::PathBuf;

/// Errors produced by every stage of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scalar argument fell outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value violated a type invariant.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// An annotation or detection references an id that does not exist.
    #[error("{entity} {id} references unknown {target} {target_id}")]
    DanglingReference {
        entity: &'static str,
        id: u64,
        target: &'static str,
        target_id: u64,
    },

    #[error("duplicate {entity} id {id}")]
    DuplicateId { entity: &'static str, id: u64 },

    /// Malformed JSON; serde reports line and column.
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(reason: impl Into<String>) -> Self {
        Error::Domain(reason.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
