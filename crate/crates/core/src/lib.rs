//! Variance-difference tests for heteroskedasticity in high-dimensional
//! regression, built on coordinate-wise Gaussian knockoffs and random-forest
//! centering.
//!
//! The pipeline is:
//!
//! 1. [`knockoff::generate_knockoffs`] draws a knockoff copy of every feature.
//! 2. [`forest::fit_forest`] estimates the conditional mean, and
//!    [`forest::residuals`] centers the response.
//! 3. [`hetero::vd_test`] (one feature) or [`hetero::vdbp_test`] (any
//!    heteroskedasticity) compares squared residuals below a break for a
//!    feature against its knockoff.
//!
//! [`sim`] holds the data-generating processes and Monte Carlo harness used to
//! check size and power.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod forest;
pub mod hetero;
pub mod knockoff;
pub mod normal;
pub mod rng;
pub mod sim;

pub use data::{BreakGrid, Dataset, SampleSplit};
pub use error::{Error, Result};
pub use forest::{ForestConfig, ForestModel};
pub use hetero::{BreakMode, Centering, TestConfig, TestReport};
pub use knockoff::{KnockoffGenConfig, KnockoffModel};
