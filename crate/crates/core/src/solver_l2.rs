//! Solvers for the squared-l2 fusion objective.
//!
//! [`fit_cd`] runs block coordinate descent directly on the objective, one covariate row
//! `beta_{j,1:K}` at a time. [`fit_augmented`] rewrites the problem as a single classical
//! lasso over the flattened coefficients `b = (beta_1; ...; beta_K)`, with the fusion term
//! moved into extra zero-response rows, and hands it to [`crate::baselines::lasso_cd`].
//! The two routes minimize the same function and are used to cross-check each other.

use ndarray::{Array1, Array2};

use crate::baselines::{lasso_cd, LassoProblem};
use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::linalg::{CscMatrix, Design};
use crate::model::{
    CoefficientMatrix, FitResult, FusionNorm, FusionWeights, PenaltyConfig, SolverOptions,
};
use crate::objective::{fusion_penalty, soft_threshold};

/// Unpenalized minimizer of the objective along one coordinate `beta_{j,k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateUpdate {
    /// Minimizer ignoring the l1 term; 0 when the coordinate is degenerate.
    pub value: f64,
    /// `x_jk^T x_jk + gamma * sum_k' tau_kk'`, the coordinate's quadratic coefficient.
    pub curvature: f64,
    /// Zero column with no fusion pull, so every value is equally good.
    pub degenerate: bool,
}

impl CoordinateUpdate {
    fn new(numerator: f64, curvature: f64) -> Self {
        if curvature > 0.0 {
            Self {
                value: numerator / curvature,
                curvature,
                degenerate: false,
            }
        } else {
            Self {
                value: 0.0,
                curvature: 0.0,
                degenerate: true,
            }
        }
    }

    /// Exact coordinate minimizer including `lambda |beta_jk|`.
    pub fn penalized(&self, lambda: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            soft_threshold(self.value, lambda / (2.0 * self.curvature))
        }
    }
}

fn check_inputs(data: &GroupedDataset, config: &PenaltyConfig, tau: &FusionWeights) -> Result<()> {
    if config.fusion_norm != FusionNorm::L2 {
        return Err(Error::InvalidParameter(
            "this solver requires the l2 fusion norm".into(),
        ));
    }
    if tau.n_groups() != data.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "fusion weights are for {} groups, data has {}",
            tau.n_groups(),
            data.n_groups()
        )));
    }
    Ok(())
}

/// Coordinate update for `beta_{j,k}` with every other coefficient held at `b`.
///
/// The fusion term contributes `gamma * sum_k' tau_kk' (beta_jk - beta_jk')^2` for this
/// coordinate, so the update is
/// `(x^T (y_k - X_{-j} beta_{-j}) + gamma sum tau beta_jk') / (x^T x + gamma sum tau)`.
pub fn cd_update(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    j: usize,
    k: usize,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<CoordinateUpdate> {
    data.check_coefficients(b)?;
    if j >= data.n_features() || k >= data.n_groups() {
        return Err(Error::DimensionMismatch(format!("coordinate ({j}, {k}) out of range")));
    }
    let g = data.group(k);
    let col = g.x.column(j);
    let partial = &g.y - &g.x.dot(&b.column(k)) + &(&col * b[[j, k]]);
    let (pull, weight) = fusion_pull(b.row(j).iter().copied(), tau, k);
    Ok(CoordinateUpdate::new(
        col.dot(&partial) + config.gamma * pull,
        col.dot(&col) + config.gamma * weight,
    ))
}

// (sum_k' tau_kk' beta_jk', sum_k' tau_kk') over k' != k.
fn fusion_pull(row: impl Iterator<Item = f64>, tau: &FusionWeights, k: usize) -> (f64, f64) {
    row.enumerate()
        .filter(|&(other, _)| other != k)
        .fold((0.0, 0.0), |(pull, weight), (other, v)| {
            let t = tau.get(k, other);
            (pull + t * v, weight + t)
        })
}

/// Block coordinate descent on the l2-fusion objective.
///
/// Each sweep visits covariates `j = 1..p`; for each it minimizes exactly over
/// `beta_{j,1}, ..., beta_{j,K}` in turn, then over a common shift of the whole row
/// (which leaves the fusion term unchanged). Residuals are maintained incrementally. The
/// objective is recorded after every sweep and never increases.
pub fn fit_cd(
    data: &GroupedDataset,
    config: &PenaltyConfig,
    tau: &FusionWeights,
    opts: &SolverOptions,
    b_init: Option<&CoefficientMatrix>,
) -> Result<FitResult> {
    check_inputs(data, config, tau)?;
    let opts = opts.validated()?;
    let (p, n_groups) = (data.n_features(), data.n_groups());
    let mut b = match b_init {
        Some(init) => {
            data.check_coefficients(init)?;
            init.clone()
        }
        None => CoefficientMatrix::zeros(p, n_groups),
    };
    let (lambda, gamma) = (config.lambda, config.gamma);
    let sq_norms = Array2::from_shape_fn((p, n_groups), |(j, k)| data.group(k).x.col_sq_norm(j));
    let mut resid: Vec<Array1<f64>> = data
        .groups()
        .iter()
        .enumerate()
        .map(|(k, g)| &g.y - &g.x.dot(&b.column(k)))
        .collect();
    let shift_rows = gamma > 0.0 && n_groups > 1;

    let objective_of = |b: &CoefficientMatrix, resid: &[Array1<f64>]| -> f64 {
        let rss: f64 = resid.iter().map(|r| r.dot(r)).sum();
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        let fusion = if gamma > 0.0 { gamma * fusion_penalty(b, tau, FusionNorm::L2) } else { 0.0 };
        rss + lambda * l1 + fusion
    };

    let mut previous = objective_of(&b, &resid);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 0..p {
            for k in 0..n_groups {
                let x = &data.group(k).x;
                let old = b[[j, k]];
                let (pull, weight) = fusion_pull(b.row(j).iter().copied(), tau, k);
                let update = CoordinateUpdate::new(
                    x.col_dot(j, resid[k].view()) + sq_norms[[j, k]] * old + gamma * pull,
                    sq_norms[[j, k]] + gamma * weight,
                );
                let new = update.penalized(lambda);
                if new != old {
                    x.col_axpy(j, old - new, &mut resid[k]);
                    b[[j, k]] = new;
                }
            }
            if shift_rows {
                shift_row(data, &mut b, &mut resid, &sq_norms, j, lambda);
            }
        }
        let current = objective_of(&b, &resid);
        if !current.is_finite() {
            return Err(Error::Diverged("objective became non-finite".into()));
        }
        trace.push(current);
        if SolverOptions::relative_change(previous, current) < opts.tol {
            converged = true;
            break;
        }
        previous = current;
    }
    Ok(FitResult {
        coefficients: b,
        objective_trace: trace,
        iterations,
        converged,
    })
}

// Minimizes exactly over t in `beta_{j,.} + t`. The restricted objective is the convex
// piecewise quadratic `A t^2 - 2 C t + lambda sum_k |beta_jk + t|` (plus a constant), so
// the minimum is either at a kink `t = -beta_jk` or at the stationary point of a piece.
fn shift_row(
    data: &GroupedDataset,
    b: &mut CoefficientMatrix,
    resid: &mut [Array1<f64>],
    sq_norms: &Array2<f64>,
    j: usize,
    lambda: f64,
) {
    let n_groups = b.n_groups();
    let a: f64 = sq_norms.row(j).sum();
    if a <= 0.0 {
        return;
    }
    let c: f64 = (0..n_groups)
        .map(|k| data.group(k).x.col_dot(j, resid[k].view()))
        .sum();
    let row: Vec<f64> = b.row(j).to_vec();
    let cost = |t: f64| a * t * t - 2.0 * c * t + lambda * row.iter().map(|v| (v + t).abs()).sum::<f64>();

    let mut kinks: Vec<f64> = row.iter().map(|v| -v).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let mut candidates = kinks.clone();
    let mut bounds = Vec::with_capacity(kinks.len() + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend(kinks.iter().copied());
    bounds.push(f64::INFINITY);
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (false, true) => hi - 1.0,
            (true, false) => lo + 1.0,
            (false, false) => 0.0,
        };
        let slope_sign: f64 = row.iter().map(|v| (v + probe).signum()).sum();
        let t = (2.0 * c - lambda * slope_sign) / (2.0 * a);
        if t > lo && t < hi {
            candidates.push(t);
        }
    }
    let base = cost(0.0);
    let (best_t, best) = candidates
        .into_iter()
        .map(|t| (t, cost(t)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or((0.0, base));
    if best < base - 1e-14 * base.abs().max(1.0) && best_t != 0.0 {
        for k in 0..n_groups {
            let old = b[[j, k]];
            let new = old + best_t;
            data.group(k).x.col_axpy(j, old - new, &mut resid[k]);
            b[[j, k]] = new;
        }
    }
}

/// Largest violation of the l2-fusion optimality conditions over all coordinates.
///
/// For each `(j, k)` the smooth gradient is
/// `g = -2 x_jk^T r_k + 2 gamma sum_k' tau_kk' (beta_jk - beta_jk')`; optimality requires
/// `|g| <= lambda` at zero coefficients and `g = -lambda sign(beta_jk)` elsewhere.
pub fn stationarity_violation(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<f64> {
    data.check_coefficients(b)?;
    let mut worst: f64 = 0.0;
    for (k, g) in data.groups().iter().enumerate() {
        let r = &g.y - &g.x.dot(&b.column(k));
        for j in 0..data.n_features() {
            let beta = b[[j, k]];
            let fusion: f64 = (0..data.n_groups())
                .filter(|&o| o != k)
                .map(|o| tau.get(k, o) * (beta - b[[j, o]]))
                .sum();
            let grad = -2.0 * g.x.column(j).dot(&r) + 2.0 * config.gamma * fusion;
            let v = if beta == 0.0 {
                (grad.abs() - config.lambda).max(0.0)
            } else {
                (grad + config.lambda * beta.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// The l2-fusion problem written as one lasso over flattened coefficients.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    /// Block-diagonal data rows on top of the fusion rows `Gamma`.
    pub x: CscMatrix,
    /// Stacked responses followed by zeros for the fusion rows.
    pub y: Array1<f64>,
    pub n_data_rows: usize,
    n_features: usize,
    n_groups: usize,
    /// Fusion-row blocks: pair `(k, k')` owns rows `start..start + p`.
    pub pair_rows: Vec<(usize, usize, usize)>,
}

impl AugmentedSystem {
    /// Column of `beta_{j,k}` in the flattened layout.
    pub fn flat_index(&self, j: usize, k: usize) -> usize {
        k * self.n_features + j
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn layout(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_features, flat / self.n_features)
    }

    pub fn n_fusion_rows(&self) -> usize {
        self.y.len() - self.n_data_rows
    }

    pub fn flatten(&self, b: &CoefficientMatrix) -> Array1<f64> {
        Array1::from_shape_fn(self.n_features * self.n_groups, |i| {
            let (j, k) = self.layout(i);
            b[[j, k]]
        })
    }

    pub fn unflatten(&self, flat: &Array1<f64>) -> Result<CoefficientMatrix> {
        CoefficientMatrix::new(Array2::from_shape_fn((self.n_features, self.n_groups), |(j, k)| {
            flat[self.flat_index(j, k)]
        }))
    }
}

/// Builds the augmented design and response.
///
/// Fusion rows come in blocks of `p`, one block per pair `k < k'` in lexicographic order;
/// the row for covariate `m` holds `+sqrt(gamma tau_kk')` at `beta_{m,k}` and
/// `-sqrt(gamma tau_kk')` at `beta_{m,k'}`, so its squared norm reproduces
/// `gamma tau_kk' (beta_mk - beta_mk')^2`. Pairs with zero weight get no rows.
pub fn build_augmented_system(
    data: &GroupedDataset,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<AugmentedSystem> {
    if tau.n_groups() != data.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "fusion weights are for {} groups, data has {}",
            tau.n_groups(),
            data.n_groups()
        )));
    }
    let (p, n_groups) = (data.n_features(), data.n_groups());
    let n_data_rows = data.n_samples();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p * n_groups];

    let mut offset = 0;
    for (k, g) in data.groups().iter().enumerate() {
        for j in 0..p {
            let col = &mut columns[k * p + j];
            col.extend(g.x.column(j).iter().enumerate().map(|(i, &v)| (offset + i, v)));
        }
        offset += g.n_samples();
    }

    let mut pair_rows = Vec::new();
    for (a, c, t) in tau.pairs() {
        let weight = config.gamma * t;
        if weight <= 0.0 {
            continue;
        }
        let s = weight.sqrt();
        pair_rows.push((a, c, offset));
        for m in 0..p {
            columns[a * p + m].push((offset + m, s));
            columns[c * p + m].push((offset + m, -s));
        }
        offset += p;
    }

    let mut y = Array1::zeros(offset);
    let mut start = 0;
    for g in data.groups() {
        y.slice_mut(ndarray::s![start..start + g.n_samples()]).assign(&g.y);
        start += g.n_samples();
    }
    Ok(AugmentedSystem {
        x: CscMatrix::from_columns(offset, columns),
        y,
        n_data_rows,
        n_features: p,
        n_groups,
        pair_rows,
    })
}

/// Solves the l2-fusion problem through its augmented lasso form.
pub fn fit_augmented(
    data: &GroupedDataset,
    config: &PenaltyConfig,
    tau: &FusionWeights,
    opts: &SolverOptions,
    b_init: Option<&CoefficientMatrix>,
) -> Result<FitResult> {
    check_inputs(data, config, tau)?;
    let system = build_augmented_system(data, config, tau)?;
    let init = match b_init {
        Some(b) => {
            data.check_coefficients(b)?;
            Some(system.flatten(b))
        }
        None => None,
    };
    let problem = LassoProblem::new(system.x.clone(), system.y.clone(), config.lambda)?;
    let fit = lasso_cd(&problem, opts, init.as_ref())?;
    let flat = fit.coefficients.column(0).to_owned();
    Ok(FitResult {
        coefficients: system.unflatten(&flat)?,
        ..fit
    })
}
