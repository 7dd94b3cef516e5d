use std::path::PathBuf;

/// Errors produced across the captioning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("need at least {clusters} vectors to train {clusters} clusters, got {vectors}")]
    TooFewVectors { vectors: usize, clusters: usize },
    #[error("nprobe {nprobe} out of range 1..={n_clusters}")]
    NprobeOutOfRange { nprobe: usize, n_clusters: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no captions left after filtering ({dropped} dropped)")]
    EmptyAfterFilter { dropped: usize },
    #[error("record id {0} already present in the datastore")]
    IdCollision(u64),
    #[error("datastore is empty")]
    EmptyStore,
    #[error("retrieval log is empty")]
    EmptyLog,
    #[error("reference caption is empty")]
    EmptyReference,
    #[error("sequence of {len} tokens exceeds context window of {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::NprobeOutOfRange { .. } => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
