//! Joint estimation of sparse linear-regression coefficients across subgroups
//! of observations.
//!
//! Each subgroup `k` has its own design `X_k`, response `y_k` and coefficient
//! vector `beta_k`. Coefficients are estimated together under an l1 sparsity
//! penalty plus a fusion penalty on pairwise differences `beta_k - beta_k'`,
//! weighted by a symmetric matrix `tau`:
//!
//! ```text
//! sum_k ||y_k - X_k beta_k||^2 + lambda ||beta_k||_1 + gamma sum_{k'>k} tau_kk' ||beta_k - beta_k'||^q
//! ```
//!
//! with `q = 2` (squared l2 fusion, [`solver_l2`]) or `q = 1` (l1 fusion,
//! [`solver_l1`]). [`baselines`] holds the classical lasso and the pooled /
//! subgroup-wise comparison fits, [`weighting`] derives `tau` from covariate
//! similarity, and [`simulation`] + [`evaluation`] reproduce the synthetic
//! benchmark pipeline.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod simulation;
pub mod solver_l1;
pub mod solver_l2;
pub mod weighting;

pub use dataset::{Group, GroupedDataset, StandardizationRecord};
pub use error::{Error, Result};
pub use model::{
    CoefficientMatrix, FitResult, FusionNorm, FusionWeights, PenaltyConfig, SolverOptions,
};
