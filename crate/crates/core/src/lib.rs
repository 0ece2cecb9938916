//! Desk-scale laboratory for dynamic watermarking of control loops.
//!
//! The crate simulates a stochastic linear plant whose control inputs carry a
//! zero-mean Gaussian watermark, runs a chi-square residual detector against
//! flip / injection / replay adversaries, maintains a Bayesian detection
//! confidence, and trains a DDPG agent that adapts the watermark covariance
//! online. Everything is deterministic given a root seed.
//!
//! The crate is `no_std` + `alloc`; IO, file formats and the command-line
//! front end live in the companion `dwmlab-cli` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod attack;
pub mod belief;
pub mod detect;
pub mod dist;
pub mod env;
pub mod error;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod plant;
pub mod rl;
pub mod rng;
pub mod watermark;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
