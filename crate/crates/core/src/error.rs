use std::io;
use std::path::PathBuf;

use latentmap_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint angle {angle} of finger {finger} segment {segment} outside [{min}, {max}]")]
    AngleOutOfRange {
        finger: usize,
        segment: usize,
        angle: f64,
        min: f64,
        max: f64,
    },

    #[error("chain extends outside the camera footprint of view {view} ({detail})")]
    OutsideFootprint { view: usize, detail: String },

    #[error("crop around the hand location contains no foreground")]
    EmptyCrop,

    #[error("hand location ({0}, {1}) is outside the frame")]
    HandOutsideFrame(f64, f64),

    #[error("label access denied: sample {id} is unlabeled")]
    LabelAccess { id: u32 },

    #[error("insufficient pool for set {set}: {available} samples available")]
    InsufficientPool { set: &'static str, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::NonFiniteGradient(_) | Error::Divergence { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
