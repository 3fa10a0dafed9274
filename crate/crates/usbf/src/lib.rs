//! User scheduling and beamforming for the multiuser MISO downlink under
//! short-blocklength rate constraints.
//!
//! The crate implements three schedulers over a shared system model:
//!
//! * a greedy search that grows the served set one user at a time and then
//!   retries after evicting the most expensive user ([`greedy`]);
//! * a successive convex approximation over relaxed scheduling indicators and
//!   virtual uplink powers ([`sca`]);
//! * a graph neural network trained with a primal-dual Lagrangian rule,
//!   plus a convolutional baseline ([`jeepon`], [`cnn`], [`trainer`]).
//!
//! Supporting layers: dense complex kernels ([`numerics`]), the channel and
//! dataset model ([`system`]), short-blocklength rates ([`rates`]), the
//! uplink-downlink power duality ([`duality`]), and the comparison harness
//! with its cost model ([`report`]). Data-parallel loops run on rayon when
//! the default `parallel` feature is on; see [`exec`].

pub mod cnn;
pub mod duality;
pub mod exec;
pub mod greedy;
pub mod jeepon;
pub mod numerics;
pub mod rates;
pub mod report;
pub mod sca;
pub mod system;
pub mod trainer;

use std::fmt;

/// Library-wide error type.
#[derive(Debug)]
pub enum Error {
    /// A square matrix was required.
    NonSquare { rows: usize, cols: usize },
    /// Factorization failed: the matrix is not (numerically) positive definite.
    NotPositiveDefinite { pivot: usize },
    /// Two operands disagree on dimensions.
    DimensionMismatch { context: &'static str, expected: usize, found: usize },
    /// A denominator or pivot collapsed below the breakdown threshold.
    NumericalBreakdown(String),
    /// An argument was outside its documented domain.
    InvalidArgument(String),
    /// A linear system had no usable pivot.
    SingularSystem(String),
    /// A loss or objective stopped being finite.
    NonFinite(String),
    /// A solver produced an allocation that fails independent verification.
    InfeasibleOutput(String),
    /// File contents did not match the expected on-disk format.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            Error::NotPositiveDefinite { pivot } => {
                write!(f, "matrix is not positive definite (pivot {pivot})")
            }
            Error::DimensionMismatch { context, expected, found } => {
                write!(f, "{context}: expected dimension {expected}, found {found}")
            }
            Error::NumericalBreakdown(msg) => write!(f, "numerical breakdown: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::SingularSystem(msg) => write!(f, "singular linear system: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::InfeasibleOutput(msg) => write!(f, "infeasible output: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
