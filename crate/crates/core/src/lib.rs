//! Online parameter estimation for linear SDEs with the ensemble Kalman-Bucy
//! filter (EnKBF).
//!
//! The drift is `f(x, θ) = θ A x` with a normal, stable `A` and known
//! diffusion constant `γ`. The crate covers:
//!
//! * [`models`]: model types, stationary covariances and matrix helpers;
//! * [`paths`]: Euler-Maruyama data generation (reference, two-scale and
//!   low-pass filtered observations) plus increments, second-order iterated
//!   integrals and Chen's relation;
//! * [`estimators`]: discrete-time mean-field EnKBF variants, the particle
//!   ensemble, the filtered-data EnKBF and stochastic gradient descent;
//! * [`analysis`]: closed-form frequentist moments, the multiscale
//!   correction estimator and the subsampling diagnostic;
//! * [`harness`]: seeded, paired Monte Carlo experiments;
//! * [`cli`]: the `enkbf` command line front end.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod paths;
pub mod rng;

pub use error::{Error, ErrorCategory, Result};
