use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tensor container
    #[error("{path}: not a tensor container (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported container version {major}.{minor}")]
    UnsupportedVersion { path: PathBuf, major: u8, minor: u8 },
    #[error("unsupported dtype {descr:?} (only <f4 and <f8 are accepted)")]
    UnsupportedDtype { descr: String },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("header declares {expected} bytes of payload, found {found}")]
    HeaderShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteData { index: usize },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    // manifest
    #[error("manifest schema error: {0}")]
    SchemaError(String),
    #[error("image {image_id}: tensor {path} is missing or unusable: {reason}")]
    DanglingTensorRef { image_id: String, path: PathBuf, reason: String },
    #[error("image {0} appears in both train_fullsup and test splits")]
    OverlappingSplits(String),
    #[error("image {image_id}: box {bbox:?} lies outside the {width}x{height} image")]
    BoxOutOfBounds { image_id: String, bbox: [u32; 4], width: u32, height: u32 },

    // computation
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("weight filter selects no channels")]
    EmptySelection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feature map stack has zero total variance")]
    DegenerateStack,
    #[error("threshold {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("heatmap must be normalized before binarization")]
    NotNormalized,
    #[error("no heatmap for image {0}")]
    MissingHeatmap(String),
    #[error("split {0} is empty")]
    EmptySplit(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contribution map sums to zero")]
    AllZeroContribution,
    #[error("contribution map has a negative entry at flat index {0}")]
    NegativeContribution(usize),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
