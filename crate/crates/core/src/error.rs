use thiserror::Error;

/// Errors raised across the estimator toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown foot id {0}")]
    UnknownFoot(usize),
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("invalid QP problem: {0}")]
    InvalidProblem(String),
    #[error("simulation fault at t = {time:.4} s: {reason}")]
    SimulationFault { time: f64, reason: String },
    #[error("window assembly: {0}")]
    Assembly(String),
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
