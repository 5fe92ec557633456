use thiserror::Error;

/// Errors raised by the simulation library.
///
/// Numeric payloads are stored as `f64` regardless of the scalar type the
/// computation ran in.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("query at t = {t} beyond the path frontier {frontier}")]
    QueryBeyondFrontier { t: f64, frontier: f64 },

    #[error("append at t = {t} is not after the frontier {frontier}")]
    NonMonotoneTime { t: f64, frontier: f64 },

    #[error("weighted norm is not finite: {0}")]
    NonFiniteNorm(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sampler produced {attempts} zero-distance pairs in a row")]
    DegeneratePair { attempts: usize },

    #[error("neutral fixed point did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    FixedPointDivergence {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("path was stopped at t = {t}; stepping past the stopping time is disabled")]
    StoppedState { t: f64 },

    #[error("resolution {resolution} does not divide the fine level {fine}")]
    ResolutionMismatch { resolution: u32, fine: u32 },

    #[error("contraction constant k = {k} must be below 1/sqrt(2) for the moment bound")]
    ContractionTooLarge { k: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
