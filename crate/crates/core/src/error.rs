use std::path::PathBuf;

/// Errors produced anywhere in the pose-regression pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: String },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("quaternion norm {norm:e} is too close to zero")]
    NearZeroQuaternion { norm: f64 },
    #[error("scale alignment is degenerate: sum of squared prediction norms is {sum_sq:e}")]
    DegenerateScale { sum_sq: f64 },
    #[error("translation direction undefined: norm {norm:e} below threshold")]
    DegenerateDirection { norm: f64 },
    #[error("channel count {channels} must be divisible by {divisor}")]
    BadChannelCount { channels: usize, divisor: usize },
    #[error("image {height}x{width} is smaller than the 8x8 minimum")]
    TooSmall { height: usize, width: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("degenerate quaternion at line {line}")]
    BadQuaternion { line: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("degenerate synthetic geometry: {msg}")]
    DegenerateGeometry { msg: String },
    #[error("split ratios {ratios:?} must be non-negative and sum to 1")]
    BadRatios { ratios: Vec<f64> },
    #[error("checkpoint does not match model: {msg}")]
    CheckpointMismatch { msg: String },
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("empty input: {what}")]
    EmptyInput { what: String },
    #[error("config error for key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl Error {
    /// Stable machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::NonScalarRoot { .. } => "NonScalarRoot",
            Error::NearZeroQuaternion { .. } => "NearZeroQuaternion",
            Error::DegenerateScale { .. } => "DegenerateScale",
            Error::DegenerateDirection { .. } => "DegenerateDirection",
            Error::BadChannelCount { .. } => "BadChannelCount",
            Error::TooSmall { .. } => "TooSmall",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ParseError { .. } => "ParseError",
            Error::BadQuaternion { .. } => "BadQuaternion",
            Error::EmptyDataset => "EmptyDataset",
            Error::DegenerateGeometry { .. } => "DegenerateGeometry",
            Error::BadRatios { .. } => "BadRatios",
            Error::CheckpointMismatch { .. } => "CheckpointMismatch",
            Error::Format { .. } => "FormatError",
            Error::EmptyInput { .. } => "EmptyInput",
            Error::Config { .. } => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Image { .. } => "ImageError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, shapes: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            op,
            shapes: format!("{shapes:?}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
