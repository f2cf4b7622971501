use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("calibration violated: S(x~) = {got}, expected {expected}")]
    CalibrationViolation { expected: f64, got: f64 },

    #[error("x = {x} lies outside the domain [0, {len}]")]
    OutOfDomain { x: f64, len: f64 },

    #[error("derivative undefined at kink x = {x}")]
    DerivativeAtKink { x: f64 },

    #[error("derivative of order {0} is not available")]
    UnsupportedDerivative(u8),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("power iteration did not converge after {iterations} iterations (last L1 change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("orbit of x0 = {x0} is eventually periodic at machine precision (repeat after {steps} steps)")]
    EventuallyPeriodic { x0: f64, steps: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("normalizer vanished at t = {t}: the population dies out in finite time")]
    Extinction { t: f64 },

    #[error("instability at step {step}: |u| reached {value:e} at x = {x}")]
    Instability { step: usize, value: f64, x: f64 },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("size {n} exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("no data to process")]
    EmptyData,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
