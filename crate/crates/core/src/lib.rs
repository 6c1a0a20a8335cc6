//! Target-population conditional average treatment effects from nested trials.
//!
//! The estimator runs in two stages:
//!
//! 1. Nuisance functions (trial participation probability, treatment
//!    probability among participants, and arm-specific outcome regressions)
//!    are cross-fitted over `L` folds and combined into pseudo-outcomes whose
//!    conditional mean given the effect modifier `V` is the CATE.
//! 2. The pseudo-outcomes are smoothed on `V` with a local linear kernel
//!    regression, with pointwise Wald intervals from a sandwich variance.
//!
//! The [`simulation`] module provides synthetic nested-trial data generators
//! with known truth and a Monte Carlo harness for bias, RMSE and coverage.
//!
//! Data-parallel loops (cross-fit folds, ensemble members, grid points,
//! bandwidth candidates, Monte Carlo replicates) run on rayon when the
//! `parallel` feature is enabled and sequentially otherwise. Results are
//! identical either way.

pub mod crossfit;
pub mod data;
pub mod error;
pub mod learners;
pub mod parallel;
pub mod rng;
pub mod simulation;
pub mod smoother;

pub use error::{Error, ErrorCategory, Result};
