use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("mask {path} contains non-binary value {value} (expected 0 or 255)")]
    NonBinaryValues { path: PathBuf, value: u8 },

    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("mask has no true pixels")]
    EmptyMask,

    #[error("{kind} value {value} outside range [{min}, {max}]")]
    ValueOutOfRange {
        kind: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid augmentation method: {0}")]
    InvalidMethod(String),

    #[error("invalid augmentation pool: {0}")]
    InvalidPool(String),

    #[error("no connected region meets the minimum area")]
    NoRegionFound,

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("no mask stored for sample {0:?}")]
    MaskNotFound(String),

    #[error("crop has no pixels")]
    EmptyCrop,

    #[error("classifier training set contains only one factory label")]
    SingleClassTrainingSet,

    #[error("verdicts were computed on pool version {verdict}, current pool is version {current}")]
    StaleVerdicts { verdict: u32, current: u32 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_sample(self, id: &str) -> Error {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                id: id.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn in_iteration(self, iteration: usize) -> Error {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
