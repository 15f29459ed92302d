use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: operands have different precision")]
    PrecisionMismatch { op: &'static str },

    #[error("axis {axis} is out of range for a rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("{axis} axis: output extent ({input} + 2*{pad} - {kernel}) / {stride} + 1 is not integral")]
    NonIntegralExtent {
        axis: &'static str,
        input: usize,
        pad: usize,
        kernel: usize,
        stride: usize,
    },

    #[error("crop of {amount} exceeds extent {extent} on axis {axis}")]
    OverCrop { axis: usize, amount: usize, extent: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("unknown parameter name `{0}`")]
    UnknownParameter(String),
    #[error("tensor `{name}` has extents {found:?}, model expects {expected:?}")]
    TensorMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model parameter `{0}` is missing from the checkpoint")]
    MissingParameter(String),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: no header")]
    NoHeader { path: PathBuf },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}: row {row}: {reason}")]
    MalformedRow { path: PathBuf, row: usize, reason: String },
    #[error("{0}: no index.csv found")]
    MissingIndex(PathBuf),
    #[error("{0}: dataset root contains no videos")]
    EmptyRoot(PathBuf),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for key `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
}
