use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("weight vector has length {found}, expected {expected}")]
    WeightLength { expected: usize, found: usize },

    #[error("weights must be finite and non-negative with a positive sum")]
    InvalidWeights,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("data has no variance to retain")]
    ConstantData,

    #[error("requested {requested} output components but only {available} are available")]
    RankDeficient { requested: usize, available: usize },

    #[error("episode boundary {boundary} out of range for series of length {len}")]
    BoundaryOutOfRange { boundary: usize, len: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("pose ({x:.3}, {y:.3}) is outside free space")]
    OutsideFreeSpace { x: f64, y: f64 },

    #[error("episode is finished; call reset first")]
    EpisodeFinished,

    #[error("unknown action id {0}")]
    UnknownAction(u8),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("update aborted: {0}")]
    NumericalGuard(String),

    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::UnexpectedEof {
            Error::Corrupt("unexpected end of file".into())
        } else {
            Error::Io(err)
        }
    }
}
