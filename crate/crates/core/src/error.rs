use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: landmark {index}: {reason}")]
    InvalidFrame { index: usize, reason: String },

    #[error("invalid frame: expected 33 landmarks, found {found}")]
    LandmarkCount { found: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate skeleton: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch:?}, sample {sample}")]
    Numeric { epoch: Option<usize>, sample: usize },

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("ROC curve undefined: {0}")]
    UndefinedRoc(String),

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{}:{line}: {detail}", file.display())]
    Parse { file: PathBuf, line: usize, detail: String },

    #[error("{}: clip has {frames} frames, at least {required} required", file.display())]
    ClipTooShort {
        file: PathBuf,
        frames: usize,
        required: usize,
    },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("inconsistent model shape: {0}")]
    Shape(String),

    #[error("session error: {0}")]
    Session(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
