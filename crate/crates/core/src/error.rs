use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label set must not be empty")]
    EmptyLabels,

    #[error("label {label} out of range 1..={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: Vec<u8>,
    },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("length mismatch in {path}: expected {expected} bytes, found {actual}")]
    Length {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite feature value in {path} at row {row}, column {col}")]
    NonFiniteFeature { path: PathBuf, row: usize, col: usize },

    #[error("feature file {path} has zero {what}")]
    EmptyFeatures { path: PathBuf, what: &'static str },

    #[error("model dimension mismatch ({what}): checkpoint has {checkpoint}, data has {data}")]
    ModelDims {
        what: &'static str,
        checkpoint: usize,
        data: usize,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("video {video} is missing {modality} features")]
    MissingModality { video: String, modality: String },

    #[error("non-finite loss on video {video} at epoch {epoch}")]
    NonFiniteLoss { video: String, epoch: usize },

    #[error("{0}")]
    Synthetic(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
