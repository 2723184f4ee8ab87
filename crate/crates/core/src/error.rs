use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point ({x1}, {x2}) is farther than pi/4 from every lattice corner")]
    OutsideCornerChart { x1: f64, x2: f64 },

    #[error("sparse factorisation failed: {0}")]
    Factorization(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("probe did not leave its region before the time cap {cap}")]
    ProbeTimeout { cap: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
