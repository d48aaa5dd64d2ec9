//! Classical lasso by cyclic coordinate descent, and the pooled / subgroup-wise fits.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::linalg::Design;
use crate::model::{CoefficientMatrix, FitResult, SolverOptions};
use crate::objective::soft_threshold;

/// `min_beta ||y - X beta||^2 + lambda ||beta||_1`.
#[derive(Debug, Clone)]
pub struct LassoProblem<D = Array2<f64>> {
    pub x: D,
    pub y: Array1<f64>,
    pub lambda: f64,
}

impl<D: Design> LassoProblem<D> {
    pub fn new(x: D, y: Array1<f64>, lambda: f64) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                x.n_rows(),
                y.len()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
        }
        Ok(Self { x, y, lambda })
    }

    pub fn objective(&self, beta: &Array1<f64>) -> f64 {
        let r = self.residual(beta);
        r.dot(&r) + self.lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn residual(&self, beta: &Array1<f64>) -> Array1<f64> {
        let mut r = self.y.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                self.x.col_axpy(j, -b, &mut r);
            }
        }
        r
    }

    /// Smallest `lambda` for which `beta = 0` is optimal: `2 max_j |x_j^T y|`.
    pub fn zero_threshold(&self) -> f64 {
        (0..self.x.n_cols())
            .map(|j| 2.0 * self.x.col_dot(j, self.y.view()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the lasso optimality conditions at `beta`.
    pub fn kkt_violation(&self, beta: &Array1<f64>) -> f64 {
        let r = self.residual(beta);
        (0..self.x.n_cols())
            .map(|j| {
                let g = 2.0 * self.x.col_dot(j, r.view());
                if beta[j] == 0.0 {
                    (g.abs() - self.lambda).max(0.0)
                } else {
                    (g - self.lambda * beta[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Cyclic coordinate descent with residual maintenance.
///
/// Each sweep visits every coordinate once; the objective after each sweep is recorded.
/// Converged means the relative objective change fell below `tol` and the KKT residual
/// is at most `sqrt(tol) (1 + lambda)`.
pub fn lasso_cd<D: Design>(
    problem: &LassoProblem<D>,
    opts: &SolverOptions,
    beta_init: Option<&Array1<f64>>,
) -> Result<FitResult> {
    let opts = opts.validated()?;
    let p = problem.x.n_cols();
    let mut beta = match beta_init {
        Some(b) if b.len() != p => {
            return Err(Error::DimensionMismatch(format!(
                "initial coefficients have length {}, design has {p} columns",
                b.len()
            )))
        }
        Some(b) => b.clone(),
        None => Array1::zeros(p),
    };
    let sq_norms: Vec<f64> = (0..p).map(|j| problem.x.col_sq_norm(j)).collect();
    let mut resid = problem.residual(&beta);
    let half_lambda = 0.5 * problem.lambda;
    let kkt_tol = opts.tol.sqrt() * (1.0 + problem.lambda);

    let mut previous = problem.objective(&beta);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 0..p {
            let old = beta[j];
            let new = if sq_norms[j] > 0.0 {
                let rho = problem.x.col_dot(j, resid.view()) + sq_norms[j] * old;
                soft_threshold(rho, half_lambda) / sq_norms[j]
            } else {
                0.0
            };
            if new != old {
                problem.x.col_axpy(j, old - new, &mut resid);
                beta[j] = new;
            }
        }
        let current =
            resid.dot(&resid) + problem.lambda * beta.iter().map(|v| v.abs()).sum::<f64>();
        if !current.is_finite() {
            return Err(Error::Diverged("lasso objective became non-finite".into()));
        }
        trace.push(current);
        if SolverOptions::relative_change(previous, current) < opts.tol
            && problem.kkt_violation(&beta) <= kkt_tol
        {
            converged = true;
            break;
        }
        previous = current;
    }
    Ok(FitResult {
        coefficients: CoefficientMatrix::new(beta.insert_axis(ndarray::Axis(1)))?,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// One lasso on all groups stacked together; the solution is copied into every column.
///
/// The objective trace is that of the stacked problem.
pub fn fit_pooled(
    data: &GroupedDataset,
    lambda: f64,
    opts: &SolverOptions,
    beta_init: Option<&Array1<f64>>,
) -> Result<FitResult> {
    let (x, y) = data.stacked();
    let problem = LassoProblem::new(x, y, lambda)?;
    let fit = lasso_cd(&problem, opts, beta_init)?;
    let beta = fit.coefficients.column(0).to_owned();
    let b = Array2::from_shape_fn((data.n_features(), data.n_groups()), |(j, _)| beta[j]);
    Ok(FitResult {
        coefficients: CoefficientMatrix::new(b)?,
        ..fit
    })
}

/// Independent lasso per group with a shared `lambda`; groups are fitted in parallel.
///
/// The objective trace holds the summed per-group objectives, padded with each group's
/// final value once it has converged.
pub fn fit_subgroupwise(
    data: &GroupedDataset,
    lambda: f64,
    opts: &SolverOptions,
    b_init: Option<&CoefficientMatrix>,
) -> Result<FitResult> {
    if let Some(b) = b_init {
        data.check_coefficients(b)?;
    }
    let fits: Vec<FitResult> = data
        .groups()
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            let problem = LassoProblem::new(g.x.clone(), g.y.clone(), lambda)?;
            let init = b_init.map(|b| b.column(k).to_owned());
            lasso_cd(&problem, opts, init.as_ref())
        })
        .collect::<Result<_>>()?;

    let mut b = Array2::zeros((data.n_features(), data.n_groups()));
    for (k, fit) in fits.iter().enumerate() {
        b.column_mut(k).assign(&fit.coefficients.column(0));
    }
    let iterations = fits.iter().map(|f| f.iterations).max().unwrap_or(0);
    let trace = (0..iterations)
        .map(|i| {
            fits.iter()
                .map(|f| f.objective_trace[i.min(f.objective_trace.len() - 1)])
                .sum()
        })
        .collect();
    Ok(FitResult {
        coefficients: CoefficientMatrix::new(b)?,
        objective_trace: trace,
        iterations,
        converged: fits.iter().all(|f| f.converged),
    })
}
