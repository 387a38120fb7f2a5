use thiserror::Error;

/// Errors raised anywhere in the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("N must be even (got {0})")]
    OddNodeCount(usize),
    #[error("N must be at least 16 (got {0})")]
    TooFewNodes(usize),
    #[error("domain length must be positive and finite (got {0})")]
    InvalidLength(f64),
    #[error("non-integer exponent {exponent} applied to non-positive value {value} at node {index}")]
    NegativeBase {
        index: usize,
        value: f64,
        exponent: f64,
    },
    #[error("field must be strictly positive: value {value} at node {index}")]
    NonPositiveField { index: usize, value: f64 },
    #[error("grid functions live on different grids")]
    GridMismatch,
    #[error("power-decay spectrum needs decay > 5/2 (got {0})")]
    DecayTooWeak(f64),
    #[error("noise amplitude must be nonnegative and finite (got {0})")]
    InvalidAmplitude(f64),
    #[error("noise coefficient for mode {mode} must be nonnegative and finite (got {value})")]
    InvalidCoefficient { mode: usize, value: f64 },
    #[error("truncation K = {k} must satisfy K < N/4 = {limit}")]
    TruncationTooLarge { k: usize, limit: usize },
    #[error("mobility exponent n = {0} outside (2, 3)")]
    MobilityOutOfRange(f64),
    #[error("alpha = {0} is singular for the alpha-entropy")]
    AlphaSingular(f64),
    #[error("alpha = {alpha} outside [1/2 - n, 2 - n] for n = {n}")]
    AlphaOutOfRange { alpha: f64, n: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("noise increments have length {got}, spectrum expects {expected}")]
    IncrementLength { got: usize, expected: usize },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("time step underflow at t = {t}: dt = {dt} < dt_min = {dt_min}")]
    StepFailure { t: f64, dt: f64, dt_min: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
