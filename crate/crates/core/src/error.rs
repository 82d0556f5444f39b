use thiserror::Error;

use crate::recursion::Side;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("lognormal calibration failed: {0}")]
    Calibration(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("at least 2 scenarios per period are required, got {0}")]
    TooFewScenarios(usize),

    #[error("sample covariance of period {period} is not positive definite")]
    RankDeficient { period: usize },

    #[error("second-moment matrix of period {period} is singular")]
    SingularSecondMoment { period: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("period {t} is out of range for horizon {horizon}")]
    PeriodOutOfRange { t: usize, horizon: usize },

    #[error("cone projection did not converge at point {point:?}")]
    ProjectionNotConverged { point: Vec<f64> },

    #[error("validity check failed at t = {t}, side {side}: b - a^2 = {value:e}")]
    Validity { t: usize, side: Side, value: f64 },

    #[error("invalid search configuration: {0}")]
    InvalidSearch(String),

    #[error("terminal wealth has zero variance; ratio is undefined")]
    ZeroVariance,

    #[error("density estimation needs at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },

    #[error("all samples are identical; bandwidth would be zero")]
    DegenerateSamples,

    #[error("scenario file: {0}")]
    ScenarioFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
