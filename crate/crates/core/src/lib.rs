//! Sublinear and superlinear expectations generated by volatility
//! uncertainty, computed three ways: dynamic programming on controlled
//! lattices, monotone finite differences for the associated HJB equations,
//! and Monte Carlo under explicit priors.

pub mod acceptance;
pub mod analytic;
pub mod csv;
pub mod error;
pub mod expr;
pub mod gbsde;
pub mod lattice;
pub mod model;
pub mod montecarlo;
pub mod pde;
pub mod scheme;
pub mod uncertainty;

pub use error::{Error, Result};
pub use expr::FieldExpr;
pub use lattice::{ControlPolicy, GridSpec, ValueSurface};
pub use model::ModelSpec;
pub use uncertainty::{Band, Mode, UncertaintyBox, Vertex};
