use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("duplicate posterior key ({id}, {model})")]
    DuplicateKey { id: String, model: String },

    #[error("label {label} out of range for {class_count} classes (row {line})")]
    LabelOutOfRange { line: usize, label: usize, class_count: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("class {class} has {available} samples, split needs at least {required}")]
    EmptyClass { class: usize, available: usize, required: usize },

    #[error("invalid split spec: {0}")]
    InvalidSplit(String),

    #[error("objective mismatch: {0}")]
    ObjectiveMismatch(String),

    #[error("arity mismatch: expected {expected}, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },

    #[error("invalid posterior vector: {0}")]
    InvalidPosterior(String),

    #[error("no prediction for sample `{id}` in oracle `{oracle}`")]
    MissingPrediction { id: String, oracle: String },

    #[error("posterior row for `{id}` sums to {sum}")]
    RowNotNormalized { id: String, sum: f64 },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("degenerate histogram: image has a single intensity {0}")]
    DegenerateHistogram(u8),

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("image {width}x{height} too small for radius {radius}")]
    ImageTooSmall { width: usize, height: usize, radius: usize },

    #[error("image dimensions mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("transport failure: {0}")]
    TransportFailure(String),

    #[error("cannot bind {endpoint}: {source}")]
    BindFailure { endpoint: String, source: io::Error },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable variant name, for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::DuplicateId(_) => "DuplicateId",
            Error::DuplicateKey { .. } => "DuplicateKey",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::InvalidDataset(_) => "InvalidDataset",
            Error::EmptyClass { .. } => "EmptyClass",
            Error::InvalidSplit(_) => "InvalidSplit",
            Error::ObjectiveMismatch(_) => "ObjectiveMismatch",
            Error::ArityMismatch { .. } => "ArityMismatch",
            Error::InvalidPosterior(_) => "InvalidPosterior",
            Error::MissingPrediction { .. } => "MissingPrediction",
            Error::RowNotNormalized { .. } => "RowNotNormalized",
            Error::DegenerateLabels(_) => "DegenerateLabels",
            Error::DegenerateHistogram(_) => "DegenerateHistogram",
            Error::EmptyMask => "EmptyMask",
            Error::ImageTooSmall { .. } => "ImageTooSmall",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ModelFormat(_) => "ModelFormat",
            Error::Config(_) => "ConfigError",
            Error::TransportFailure(_) => "TransportFailure",
            Error::BindFailure { .. } => "BindFailure",
            Error::Io { .. } => "IoError",
            Error::Image(_) => "ImageError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
