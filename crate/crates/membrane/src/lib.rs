//! Numerical laboratory for the lattice membrane model: the centered Gaussian
//! field on a box `V_N = [-N,N]^d ∩ Z^d` whose covariance is the inverse of the
//! discrete bilaplacian with zero boundary conditions, together with the
//! 2-dimensional discrete Gaussian free field as a cheap comparison model.
//!
//! The crate builds the precision matrix exactly, factorizes or solves it,
//! draws exact and harmonic-convolution (`Ḡ`) samples, and measures the
//! fractal geometry of high points (counts, clusters, pairs, high squares)
//! against closed-form exponent predictions.

pub mod experiment;
pub mod gaussian;
pub mod lattice;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod statistics;
pub mod theory;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} not supported (expected 1..=4)")]
    InvalidDimension(u8),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("box of {sites} sites exceeds the site budget {budget}")]
    BudgetExceeded { sites: u128, budget: u64 },
    #[error("site count (2N+1)^d overflows the index type")]
    SiteCountOverflow,
    #[error("region is empty")]
    EmptyRegion,
    #[error("no sub-box of the requested side fits inside the box")]
    EmptyPartition,
    #[error("site {0:?} is not inside the box")]
    SiteNotInBox([i32; 4]),
    #[error("region extends too close to the outer boundary (needs distance >= 3)")]
    RegionTooCloseToBoundary,
    #[error("matrix is not positive definite (pivot {index} is {value})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("predicted factor size {bytes} bytes exceeds the memory budget {budget}")]
    FactorBudgetExceeded { bytes: u64, budget: u64 },
    #[error("iterative solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("corrupt or incompatible binary data: {0}")]
    CorruptData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
