use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: not a RIFF/WAVE container: {reason}", path.display())]
    Container { path: PathBuf, reason: String },

    #[error("{}: unsupported audio encoding: {detail}", path.display())]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("{}: truncated data chunk", path.display())]
    TruncatedAudio { path: PathBuf },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shape underflow at layer {index} ({layer}): {detail}")]
    ShapeUnderflow {
        index: usize,
        layer: String,
        detail: String,
    },

    #[error("mel filterbank: {0}")]
    Filterbank(String),

    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("duplicate example id `{0}`")]
    DuplicateId(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("label cardinality: {0}")]
    Cardinality(String),

    #[error("{what}: bad magic {found:?}")]
    BadMagic { what: String, found: [u8; 4] },

    #[error("{what}: unsupported version {version}")]
    UnsupportedVersion { what: String, version: u32 },

    #[error("{what}: length mismatch (expected {expected} bytes, found {found})")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("checkpoint tensor `{tensor}`: {detail}")]
    TensorMismatch { tensor: String, detail: String },

    #[error("training diverged at epoch {epoch}: non-finite loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
