use thiserror::Error;

use crate::pattern::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate scatter index {0}")]
    DuplicateIndex(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("grid too small for octagon pattern: {height}x{width} (need at least 6x6)")]
    GridTooSmall { height: usize, width: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape class {0} has no bias table")]
    MissingBiasTable(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("layout is invalid: {0}")]
    InvalidLayout(ValidationReport),

    #[error("malformed layout document: {0}")]
    Parse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
