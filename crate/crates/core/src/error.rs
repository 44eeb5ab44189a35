use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("clip parse error in {location}: {message}")]
    ClipParse { location: String, message: String },

    #[error("clip validation failed for '{clip}' at frame {frame}: {message}")]
    ClipValidation {
        clip: String,
        frame: usize,
        message: String,
    },

    #[error("index {index} out of range (valid: 0..{len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("clip '{clip}' too short: {frames} frames, need at least {required}")]
    ClipTooShort {
        clip: String,
        frames: usize,
        required: usize,
    },

    #[error("normalized command {0} outside [0, 1]")]
    ConditionOutOfRange(f64),

    #[error("mode/condition mismatch: {0}")]
    ModeContract(&'static str),

    #[error("integration blowup at coordinate {coordinate} (value {value})")]
    IntegrationBlowup { coordinate: usize, value: f64 },

    #[error("non-finite network output in {0}")]
    NonFiniteOutput(&'static str),

    #[error("non-finite loss in {what}: {diagnostics}")]
    NonFiniteLoss { what: &'static str, diagnostics: String },

    #[error("frozen policy: bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("frozen policy: unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("frozen policy: file truncated while reading {field}")]
    Truncated { field: &'static str },

    #[error("frozen policy: {0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("frozen policy: invalid header: {0}")]
    InvalidHeader(String),

    #[error("unknown scenario or suite '{0}'")]
    UnknownPreset(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
