use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {kind} version {found} (supported: {supported})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u16,
        supported: u16,
    },

    #[error("truncated payload: {context}")]
    Truncated { context: String },

    #[error("trailing bytes after payload: {0} bytes")]
    TrailingBytes(usize),

    #[error("keypoint {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    KeypointOutOfBounds {
        index: usize,
        x: f32,
        y: f32,
        width: u32,
        height: u32,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("descriptor dimension must be positive")]
    ZeroDim,

    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not enough training rows: need at least {needed}, have {available}")]
    InsufficientRows { needed: usize, available: usize },

    #[error("training matrix is rank deficient: requested {requested} components, achievable rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid eigenvalue {value} at component {index}")]
    InvalidEigenvalue { index: usize, value: f64 },

    #[error("tree shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty relevant set for query {0}")]
    EmptyGoodSet(String),

    #[error("duplicate image id {0} in ranking")]
    DuplicateId(String),

    #[error("malformed {kind} line {line}: {reason}")]
    Malformed {
        kind: &'static str,
        line: usize,
        reason: String,
    },

    #[error("corrupt model file: {0}")]
    Corrupt(String),
}
