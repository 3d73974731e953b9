use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at byte {position}: found {found}, expected one of {expected:?}")]
    Parse {
        position: usize,
        found: String,
        expected: Vec<String>,
    },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid band [{lo}, {hi}]: require 0 <= lo <= hi < inf")]
    InvalidBand { lo: f64, hi: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("CFL condition violated: dt = {dt:.6e} exceeds the maximal admissible dt = {max_dt:.6e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("non-finite value produced at time step {step}, node {node}")]
    NonFinite { step: usize, node: usize },

    #[error("declared Lipschitz bound {declared} contradicted: observed difference quotient {observed}")]
    Lipschitz { declared: f64, observed: f64 },

    #[error("enumeration budget exceeded: {count} policies > {budget}")]
    Budget { count: f64, budget: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last delta {last_delta:.3e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
