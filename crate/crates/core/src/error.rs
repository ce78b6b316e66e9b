use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("path needs at least 4 waypoints, got {0}")]
    TooFewWaypoints(usize),

    #[error("waypoints {index} and {next} coincide", next = .index + 1)]
    DegenerateWaypoints { index: usize },

    #[error("path tangent vanishes at s = {0}")]
    SingularTangent(f64),

    #[error("agent {0} is in the active conflict set but sent no trajectory")]
    MissingTrajectory(u32),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("solver failure for agent {agent} at step {step}: {reason}")]
    SolverFailure { agent: u32, step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
