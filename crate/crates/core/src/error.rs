use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported Bayer pattern {0:?} (only RGGB is supported)")]
    UnsupportedPattern(String),

    #[error("sample {value} at index {index} exceeds {bit_depth}-bit range")]
    SampleOutOfRange { index: usize, value: u16, bit_depth: u32 },

    #[error("value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f32 },

    #[error("image is already white balanced")]
    AlreadyWhiteBalanced,

    #[error("wrong image layout: expected {expected}, found {found}")]
    WrongLayout {
        expected: &'static str,
        found: &'static str,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("malformed {format} file {path}: {reason}")]
    Decode {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode(format: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Decode {
            format,
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures reading or writing files, as opposed to invalid inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Decode { .. })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
