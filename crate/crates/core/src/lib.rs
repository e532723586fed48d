//! Regularization-parameter selection for discrete ill-posed linear systems
//! `y = A x0 + z`, with the test problems, baseline selectors, oracle
//! diagnostics and Monte-Carlo harness used to evaluate it.

pub mod baselines;
pub mod copra;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod problems;
pub mod spectral;

pub use error::{Error, Result};
