//! Minimum expected loss (MELO) estimation of rational functions of model
//! parameters, with frequentist covariance through a posterior-moment gradient.

pub mod baselines;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod frequentist;
pub mod harness;
pub mod linalg;
pub mod posteriors;
pub mod problems;
pub mod rng;
pub mod verify;

pub use error::{MeloError, Result};
