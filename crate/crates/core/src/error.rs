use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("point {index} lies outside the quantization box")]
    OutsideBox { index: usize },
    #[error("point {0:?} lies outside the quantization box")]
    PointOutsideBox(crate::cloud::Point3),
    #[error("lattice coordinate {value} does not fit in {bits} bits")]
    LatticeOutOfRange { value: u64, bits: u32 },
    #[error("morton code {code} does not fit in {bits} bits per axis")]
    CodeOutOfRange { code: u64, bits: u32 },
    #[error("bits per axis must be in 1..=21, got {0}")]
    InvalidBits(u32),
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("cloud too small: need at least {needed} points, have {have}")]
    CloudTooSmall { needed: usize, have: usize },
    #[error("index {index} out of range for cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown ordering scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("no usable rows: every feature row is masked")]
    AllMasked,
    #[error("fraction {fraction} leaves class {class} without training points")]
    EmptyClass { fraction: f64, class: usize },
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("bad container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
