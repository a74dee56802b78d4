//! Simulation and estimation toolkit for the spatial extent of threshold
//! exceedances in stationary random fields.
//!
//! The crate simulates two-dimensional fields on square pixel grids
//! (Gaussian with Matern correlation, plus Student, chi-square, Pareto scale
//! mixture, and a rotating-lattice "polka dot" construction), thresholds them
//! into excursion masks, and estimates how far an exceedance observed at the
//! origin extends: the distance from the origin to the nearest
//! non-exceedance. Estimators based on conditioned samples, on eroded
//! excursion volumes, and on directional crossing counts are paired with
//! closed-form predictions from the field's curvature densities so that each
//! quantity can be checked against theory.
//!
//! Module map:
//! - [`numerics`]: special functions, distributions, quadrature.
//! - [`randfield`]: grid fields, covariance factorization, conditioned
//!   sampling, file round trips.
//! - [`geometry`]: excursion masks, exact distance transforms, erosion.
//! - [`estimators`]: empirical distribution of the extremal range, slopes at
//!   zero, curvature-density and tail-dependence estimators.
//! - [`theory`]: closed-form and quadrature-based reference values.
//! - [`experiments`]: seeded end-to-end studies emitting CSV tables.

pub mod estimators;
pub mod experiments;
pub mod geometry;
pub mod numerics;
pub mod randfield;
pub mod theory;

/// Crate-wide error type.
///
/// `Invalid` covers precondition and configuration violations (the caller
/// passed something out of contract); `Numeric` covers runtime numerical
/// failures (factorization breakdown, quadrature non-convergence, rejection
/// caps); `Io`/`Parse` cover file handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
