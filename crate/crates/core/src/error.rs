use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("profile violates the obstacle at node {index}: u = {value} < -H = {floor}")]
    AdmissibilityViolation {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("profile violates the {kind} boundary condition: {detail}")]
    BoundaryConditionViolation { kind: &'static str, detail: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("gap floor must be positive, got {0}")]
    DegenerateGap(f64),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("potential was not solved for this profile")]
    NotSolved,

    #[error("traces were extracted for a different profile")]
    TraceMismatch,

    #[error("boundary family `{0}` does not carry the MEMS plate/ground conditions")]
    FamilyNotMems(String),

    #[error("boundary family `{0}` does not carry growth constants")]
    MissingGrowthConstants(String),

    #[error("direction is incompatible with the profile: {0}")]
    BcMismatch(String),

    #[error("test direction {index} is not admissible: {reason}")]
    InadmissibleTestDirection { index: usize, reason: String },

    #[error("profile file: {0}")]
    ProfileFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
