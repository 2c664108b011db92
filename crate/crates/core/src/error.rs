use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("raw score {value} of sample {id:?} outside [{min}, {max}]")]
    OutOfRange { id: String, value: f64, min: f64, max: f64 },
    #[error("split of {total} samples at ratio {ratio} leaves the {side} side empty")]
    EmptySplit { total: usize, ratio: f64, side: &'static str },
    #[error("level {level} has {available} samples, {requested} requested")]
    InsufficientLevel { level: &'static str, available: usize, requested: usize },
    #[error("rank reward needs a batch of at least 2 images, got {0}")]
    RankBatchTooSmall(usize),
    #[error("reward mode needs the {0} component")]
    MissingComponent(&'static str),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("dataset scores are not normalized to [0, 1]")]
    NotNormalized,
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;
