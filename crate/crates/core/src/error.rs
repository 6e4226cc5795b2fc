use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument `{name}`: {detail}")]
    InvalidArgument { name: &'static str, detail: String },

    #[error("invalid model config field `{field}`: {detail}")]
    Config { field: &'static str, detail: String },

    #[error("parameter `{entry}` is not shape-congruent: {detail}")]
    Incongruent { entry: String, detail: String },

    #[error("stacked blocks are not re-iterable: iteration override is only valid for ode families")]
    NotReiterable,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("dataset format: {0}")]
    Format(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("checkpoint: bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("config digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("transport: {0}")]
    Transport(#[from] io::Error),

    #[error("client {id}: {source}")]
    Client {
        id: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a client id, leaving already-attributed errors untouched.
    pub fn for_client(self, id: usize) -> Self {
        match self {
            e @ Error::Client { .. } => e,
            other => Error::Client {
                id,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through client attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Client { source, .. } => source.root(),
            other => other,
        }
    }
}
