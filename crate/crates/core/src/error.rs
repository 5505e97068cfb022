use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative value in {0}")]
    Negative(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("stack has {frames} frames, need at least {needed} for one triplet (offset {offset})")]
    StackTooShort {
        frames: usize,
        needed: usize,
        offset: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, triplet t={triplet}: {detail}")]
    Diverged {
        epoch: usize,
        triplet: usize,
        detail: String,
    },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("unsupported TIFF feature: {0}")]
    UnsupportedTiff(String),

    #[error("malformed TIFF: {0}")]
    MalformedTiff(String),

    #[error("{path}: line {line}: {msg}")]
    Csv { path: String, line: usize, msg: String },

    #[error("weights checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported weights format version {found} (this build reads version {expected})")]
    WeightsVersion { found: u32, expected: u32 },

    #[error("malformed weights file: {0}")]
    MalformedWeights(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure (divergence, non-convergence)
    /// as opposed to bad input data or parameters.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NotConverged(_))
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
