use std::path::PathBuf;

use crate::aggregator::Tier;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to decode image: {0}")]
    Decode(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("crop ({x},{y},{w},{h}) exceeds {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid normalization constants: {0}")]
    InvalidNormalization(String),

    #[error("grid set is empty")]
    EmptyGridSet,

    #[error("resolution {resolution} is not divisible by patch size {patch_size}")]
    InvalidPatchSize { resolution: u32, patch_size: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{rows}x{cols} token grid is not divisible by stride {stride}")]
    IndivisibleGrid { rows: usize, cols: usize, stride: usize },

    #[error("{tier} segment count mismatch: expected {expected}, got {got}")]
    SegmentCountMismatch {
        tier: Tier,
        expected: usize,
        got: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable variant name, used in manifests and error reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Decode(_) => "DecodeError",
            Error::InvalidDimension(_) => "InvalidDimension",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidNormalization(_) => "InvalidNormalization",
            Error::EmptyGridSet => "EmptyGridSet",
            Error::InvalidPatchSize { .. } => "InvalidPatchSize",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::IndivisibleGrid { .. } => "IndivisibleGrid",
            Error::SegmentCountMismatch { .. } => "SegmentCountMismatch",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::Config(_) => "ConfigError",
            Error::Format(_) => "FormatError",
            Error::Io { .. } => "IOError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
