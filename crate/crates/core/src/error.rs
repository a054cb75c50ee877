use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("oracle requires univariate, fully observed data")]
    NonUnivariate,
    #[error("log target is not finite at the current state")]
    NonFiniteTarget,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("weights do not sum to one (sum = {0})")]
    UnnormalizedWeights(f64),
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("particle collapse at time index {t}")]
    ParticleCollapse { t: usize },
    #[error("both filter runs collapsed")]
    BothCollapsed,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("too few draws: need at least {min}, got {got}")]
    TooFewDraws { min: usize, got: usize },
    #[error("entries must be 0 or 1")]
    NonBinary,
    #[error("zero variance; correlation undefined")]
    ZeroVariance,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
