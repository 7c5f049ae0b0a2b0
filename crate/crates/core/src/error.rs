use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse identity/camera from {0:?}")]
    Filename(String),

    #[error("manifest {path}: line {line}: {message}")]
    ManifestFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported manifest version {found} (expected {expected})")]
    ManifestVersion { found: String, expected: u32 },

    #[error("camera out of range: camera {camera} with {num_cameras} cameras")]
    CameraOutOfRange { camera: i64, num_cameras: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("unknown camera id {0}")]
    UnknownCamera(u32),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("domain index {index} out of range for {num_domains} domains")]
    DomainOutOfRange { index: usize, num_domains: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: i64, num_classes: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("config key {key}: {message}")]
    Config { key: String, message: String },

    #[error("{0}")]
    Precondition(String),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
