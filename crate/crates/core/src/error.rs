use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error("blob {name} holds {actual} bytes, manifest implies {expected}")]
    SizeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("{context}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        label: usize,
        num_classes: usize,
        context: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm row {row} in {context} cannot be normalized")]
    ZeroNorm { row: usize, context: String },

    #[error("class {class} has {available} examples, {requested} requested")]
    NotEnoughShots {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at stage {stage}, step {step}: {what}")]
    Diverged {
        stage: u8,
        step: usize,
        what: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Manifest { .. } => "manifest",
            Error::FormatVersion(_) => "format_version",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::NotEnoughShots { .. } => "not_enough_shots",
            Error::InvalidTemperature(_) => "invalid_temperature",
            Error::Config(_) => "config",
            Error::Empty(_) => "empty",
            Error::Diverged { .. } => "diverged",
        }
    }
}
