//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Failure modes surfaced by the simulation and numerics layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are inconsistent.
    Dimension { context: &'static str },
    /// A covariance failed the positive-semidefinite check.
    NotPsd { context: &'static str },
    /// A matrix inversion or solve hit a (near-)zero pivot.
    Singular { context: &'static str },
    /// Scalar argument outside the supported domain.
    Domain { context: &'static str },
    /// Invalid configuration of a model, scenario, or detector.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { context } => write!(f, "dimension mismatch: {context}"),
            Error::NotPsd { context } => write!(f, "matrix is not positive semidefinite: {context}"),
            Error::Singular { context } => write!(f, "singular matrix: {context}"),
            Error::Domain { context } => write!(f, "argument outside domain: {context}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for Error {}
