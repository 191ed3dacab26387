use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },

    #[error("level out of range: {0} is not in [0, 1]")]
    LevelOutOfRange(f64),

    #[error("profile mismatch: target has {target} intervals, source has {source_levels}")]
    ProfileMismatch { target: usize, source_levels: usize },

    #[error("invalid quantile profile: {0}")]
    InvalidProfile(String),

    #[error("batch exceeds population: batch of {batch} from {population} samples")]
    BatchExceedsPopulation { batch: usize, population: usize },

    #[error("probit undefined for p = {0}")]
    ProbitUndefined(f64),

    #[error("tail context mismatch: {0}")]
    TailContextMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown hook `{0}`")]
    UnknownHook(String),

    #[error("channel {channel} out of range for capture with {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("invalid corruption: {0}")]
    InvalidCorruption(String),

    #[error("invalid source distribution: {0}")]
    InvalidSource(String),

    #[error("cannot estimate target quantiles from {0} row(s)")]
    CannotEstimateTargetQuantiles(usize),

    #[error("degenerate target: standard deviation is zero")]
    DegenerateTarget,

    #[error("malformed statistics file: {0}")]
    MalformedStatistics(String),

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checksum mismatch: file says {stored}, contents hash to {computed}")]
    ChecksumMismatch { stored: String, computed: String },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
