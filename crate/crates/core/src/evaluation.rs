//! Prediction metrics, k-fold cross-validation over `(lambda, gamma)` grids, and the
//! replicated method comparison on simulated data.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::baselines::{fit_pooled, fit_subgroupwise};
use crate::dataset::{predict, Group, GroupedDataset, StandardizationRecord};
use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, FitResult, FusionWeights, PenaltyConfig, SolverOptions};
use crate::simulation::{derive_seed, simulate, stream_rng, SimulationConfig};
use crate::solver_l1::fit_proximal;
use crate::solver_l2::fit_cd;
use crate::weighting::TauScheme;

const STREAM_FOLDS: u64 = 11;
const STREAM_SPLIT: u64 = 12;
const STREAM_REPLICATE: u64 = 1 << 32;

/// `gamma` grid multipliers, applied to `n / K`.
pub const DEFAULT_GAMMA_FACTORS: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

/// `sum_k (n_k / n) RMSE_k` for predictions laid out group after group.
pub fn weighted_rmse(predictions: &[f64], actuals: &[f64], group_sizes: &[usize]) -> Result<f64> {
    if predictions.len() != actuals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} responses",
            predictions.len(),
            actuals.len()
        )));
    }
    if group_sizes.iter().sum::<usize>() != actuals.len() {
        return Err(Error::DimensionMismatch("group sizes do not cover the responses".into()));
    }
    if actuals.is_empty() || group_sizes.contains(&0) {
        return Err(Error::InvalidData("weighted RMSE needs non-empty groups".into()));
    }
    let n = actuals.len() as f64;
    let mut start = 0;
    let mut total = 0.0;
    for &size in group_sizes {
        let end = start + size;
        total += size as f64 / n * rmse(&predictions[start..end], &actuals[start..end]);
        start = end;
    }
    Ok(total)
}

fn rmse(predictions: &[f64], actuals: &[f64]) -> f64 {
    let ss: f64 = predictions.iter().zip(actuals).map(|(p, a)| (p - a).powi(2)).sum();
    (ss / actuals.len() as f64).sqrt()
}

/// Weighted RMSE of per-group predictions against `data`, and the per-group RMSEs.
pub fn group_errors(predictions: &[Array1<f64>], data: &GroupedDataset) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != data.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "predictions for {} groups, data has {}",
            predictions.len(),
            data.n_groups()
        )));
    }
    let flat_pred: Vec<f64> = predictions.iter().flat_map(|p| p.iter().copied()).collect();
    let flat_y: Vec<f64> = data.groups().iter().flat_map(|g| g.y.iter().copied()).collect();
    let weighted = weighted_rmse(&flat_pred, &flat_y, &data.group_sizes())?;
    let per_group = predictions
        .iter()
        .zip(data.groups())
        .map(|(p, g)| rmse(p.as_slice().expect("contiguous"), g.y.as_slice().expect("contiguous")))
        .collect();
    Ok((weighted, per_group))
}

/// Area under the ROC curve for recovering `truth` from `scores`, by the rank statistic.
///
/// Tied scores receive their average rank.
pub fn auroc_active(scores: &Array2<f64>, truth: &Array2<bool>) -> Result<f64> {
    if scores.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scores are {:?}, truth is {:?}",
            scores.dim(),
            truth.dim()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("AUROC scores must be finite".into()));
    }
    let pairs: Vec<(f64, bool)> = scores.iter().copied().zip(truth.iter().copied()).collect();
    let n_pos = pairs.iter().filter(|(_, t)| *t).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateTruth);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&r| pairs[r].1).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    FusedL2,
    FusedL1,
    Pooled,
    Subgroupwise,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FusedL2, Method::FusedL1, Method::Pooled, Method::Subgroupwise];

    pub fn name(self) -> &'static str {
        match self {
            Self::FusedL2 => "fused_l2",
            Self::FusedL1 => "fused_l1",
            Self::Pooled => "pooled",
            Self::Subgroupwise => "subgroupwise",
        }
    }

    pub fn uses_gamma(self) -> bool {
        matches!(self, Self::FusedL2 | Self::FusedL1)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method `{s}` (expected fused_l2, fused_l1, pooled or subgroupwise)"
                ))
            })
    }
}

/// Fits `method` on already standardized data. `gamma` and `tau` are ignored by the baselines.
pub fn fit_method(
    data: &GroupedDataset,
    method: Method,
    lambda: f64,
    gamma: f64,
    tau: &FusionWeights,
    opts: &SolverOptions,
    init: Option<&CoefficientMatrix>,
) -> Result<FitResult> {
    match method {
        Method::FusedL2 => fit_cd(data, &PenaltyConfig::l2(lambda, gamma)?, tau, opts, init),
        Method::FusedL1 => fit_proximal(data, &PenaltyConfig::l1(lambda, gamma)?, tau, opts, init),
        Method::Pooled => {
            let beta = init.map(|b| b.column(0).to_owned());
            fit_pooled(data, lambda, opts, beta.as_ref())
        }
        Method::Subgroupwise => fit_subgroupwise(data, lambda, opts, init),
    }
}

/// Smallest `lambda` at which every method returns all-zero coefficients on `data`.
///
/// The larger of `max_{j,k} 2|x_jk^T y_k|` (fused and subgroup-wise) and
/// `max_j 2|sum_k x_jk^T y_k|` (pooled).
pub fn lambda_max(data: &GroupedDataset) -> f64 {
    let p = data.n_features();
    let mut per_group: f64 = 0.0;
    let mut pooled = Array1::<f64>::zeros(p);
    for g in data.groups() {
        let xty = g.x.t().dot(&g.y);
        per_group = xty.iter().fold(per_group, |m, v| m.max(v.abs()));
        pooled += &xty;
    }
    2.0 * pooled.iter().fold(per_group, |m, v| m.max(v.abs()))
}

/// `n` values log-spaced from `max` down to `ratio * max`.
pub fn lambda_path(max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![max];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|i| max * (step * i as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvGrid {
    /// Strictly descending.
    pub lambda_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub stratify_by_group: bool,
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!("folds = {} must be >= 2", self.folds)));
        }
        if self.lambda_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one lambda and one gamma".into()));
        }
        if self.lambda_values.iter().any(|l| !(l.is_finite() && *l > 0.0))
            || self.lambda_values.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidParameter(
                "lambda values must be positive, finite and strictly descending".into(),
            ));
        }
        if self.gamma_values.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidParameter("gamma values must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// How a [`CvGrid`] is built for a given training set; explicit values override the
/// data-derived defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lambda_values: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub gamma_values: Option<Vec<f64>>,
    pub gamma_factors: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub stratify_by_group: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda_values: None,
            n_lambda: 30,
            lambda_min_ratio: 1e-3,
            gamma_values: None,
            gamma_factors: DEFAULT_GAMMA_FACTORS.to_vec(),
            folds: 10,
            seed: 0,
            stratify_by_group: true,
        }
    }
}

impl GridSpec {
    /// Resolves the grid for raw-unit `data`; `lambda_max` is taken on its per-group
    /// standardization.
    pub fn resolve(&self, data: &GroupedDataset) -> Result<CvGrid> {
        let lambda_values = match &self.lambda_values {
            Some(values) => values.clone(),
            None => {
                if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
                    return Err(Error::InvalidParameter(
                        "lambda path needs n_lambda >= 1 and 0 < ratio < 1".into(),
                    ));
                }
                let (std, _) = data.standardize_by_group()?;
                let max = lambda_max(&std);
                if !(max > 0.0) {
                    return Err(Error::InvalidData(
                        "responses are uncorrelated with every covariate; lambda_max is 0".into(),
                    ));
                }
                lambda_path(max, self.n_lambda, self.lambda_min_ratio)
            }
        };
        let gamma_values = match &self.gamma_values {
            Some(values) => values.clone(),
            None => {
                let scale = data.n_samples() as f64 / data.n_groups() as f64;
                self.gamma_factors.iter().map(|f| f * scale).collect()
            }
        };
        let grid = CvGrid {
            lambda_values,
            gamma_values,
            folds: self.folds,
            seed: self.seed,
            stratify_by_group: self.stratify_by_group,
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Fold label of every row, per group; a function of `(seed, group sizes)` only.
///
/// Stratified assignment shuffles each group and deals its rows round-robin, continuing the
/// rotation across groups so that fold sizes stay balanced.
pub fn assign_folds(data: &GroupedDataset, folds: usize, seed: u64, stratify: bool) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("folds = {folds} must be >= 2")));
    }
    let mut rng = stream_rng(seed, STREAM_FOLDS);
    let sizes = data.group_sizes();
    let mut labels: Vec<Vec<usize>> = sizes.iter().map(|&n| vec![0; n]).collect();
    if stratify {
        let mut offset = 0;
        for (k, &n) in sizes.iter().enumerate() {
            if n < folds {
                return Err(Error::Stratification {
                    group: data.group(k).id.clone(),
                    n,
                    folds,
                });
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            for (i, &row) in perm.iter().enumerate() {
                labels[k][row] = (offset + i) % folds;
            }
            offset += n;
        }
    } else {
        let mut all: Vec<(usize, usize)> = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| (0..n).map(move |i| (k, i)))
            .collect();
        all.shuffle(&mut rng);
        for (i, &(k, row)) in all.iter().enumerate() {
            labels[k][row] = i % folds;
        }
    }
    Ok(labels)
}

/// Training and held-out row indices, per group, for fold `fold`.
fn fold_rows(labels: &[Vec<usize>], fold: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    labels
        .iter()
        .map(|group| (0..group.len()).partition(|&i| group[i] != fold))
        .unzip()
}

/// Rows of `data`, dropping groups that end up empty.
fn subset(data: &GroupedDataset, rows: &[Vec<usize>]) -> Result<GroupedDataset> {
    let groups: Vec<Group> = data
        .groups()
        .iter()
        .zip(rows)
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(g, idx)| {
            Group::new(
                g.id.clone(),
                g.x.select(ndarray::Axis(0), idx),
                g.y.select(ndarray::Axis(0), idx),
            )
        })
        .collect();
    GroupedDataset::new(groups)
}

/// One training set keeping every group with at least two rows.
fn training_subset(data: &GroupedDataset, rows: &[Vec<usize>]) -> Result<GroupedDataset> {
    for (g, idx) in data.groups().iter().zip(rows) {
        if idx.len() < 2 {
            return Err(Error::InsufficientSamples {
                group: g.id.clone(),
                n: idx.len(),
            });
        }
    }
    data.select_rows(rows)
}

/// Held-out weighted RMSE along the lambda path, warm starting each fit from the previous.
#[allow(clippy::too_many_arguments)]
fn path_errors(
    train: &GroupedDataset,
    test: &GroupedDataset,
    method: Method,
    lambdas: &[f64],
    gamma: f64,
    tau: &FusionWeights,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let (train_std, record) = train.standardize_by_group()?;
    let mut init: Option<CoefficientMatrix> = None;
    lambdas
        .iter()
        .map(|&lambda| {
            let fit = fit_method(&train_std, method, lambda, gamma, tau, opts, init.as_ref())?;
            let predictions = predict(test, &fit.coefficients, &record)?;
            let (error, _) = group_errors(&predictions, test)?;
            init = Some(fit.coefficients);
            Ok(error)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    pub gamma: f64,
    pub fold: usize,
    pub weighted_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub gamma: f64,
    /// Ordered by lambda (grid order), then gamma (grid order), then fold.
    pub table: Vec<CvRow>,
}

impl CvResult {
    /// Mean held-out error at one grid point.
    pub fn mean_error(&self, lambda: f64, gamma: f64) -> Option<f64> {
        let errors: Vec<f64> = self
            .table
            .iter()
            .filter(|r| r.lambda == lambda && r.gamma == gamma)
            .map(|r| r.weighted_rmse)
            .collect();
        (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
    }
}

/// K-fold cross-validation of `method` over `grid` on raw-unit `data`.
///
/// Each fold's training part is standardized within groups; held-out rows are predicted
/// with the training transform and scored in raw response units. Folds and gamma values
/// are evaluated in parallel; results are reduced in grid order. The selected point
/// minimizes mean held-out weighted RMSE, ties going to the larger lambda, then the larger
/// gamma. Methods that ignore gamma are fitted once per fold and their errors repeated
/// across the gamma grid.
pub fn kfold_cv(
    data: &GroupedDataset,
    method: Method,
    grid: &CvGrid,
    tau: &FusionWeights,
    opts: &SolverOptions,
) -> Result<CvResult> {
    grid.validate()?;
    let labels = assign_folds(data, grid.folds, grid.seed, grid.stratify_by_group)?;
    let n_gamma = if method.uses_gamma() { grid.gamma_values.len() } else { 1 };
    let tasks: Vec<(usize, usize)> = (0..grid.folds)
        .flat_map(|f| (0..n_gamma).map(move |g| (f, g)))
        .collect();
    let paths: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(fold, gi)| {
            let (train_rows, test_rows) = fold_rows(&labels, fold);
            let train = training_subset(data, &train_rows)?;
            let test = subset(data, &test_rows)?;
            path_errors(&train, &test, method, &grid.lambda_values, grid.gamma_values[gi], tau, opts)
        })
        .collect::<Result<_>>()?;

    let error_at = |li: usize, gi: usize, fold: usize| {
        let gi = if method.uses_gamma() { gi } else { 0 };
        paths[fold * n_gamma + gi][li]
    };
    let mut table = Vec::with_capacity(grid.lambda_values.len() * grid.gamma_values.len() * grid.folds);
    for (li, &lambda) in grid.lambda_values.iter().enumerate() {
        for (gi, &gamma) in grid.gamma_values.iter().enumerate() {
            for fold in 0..grid.folds {
                table.push(CvRow {
                    lambda,
                    gamma,
                    fold,
                    weighted_rmse: error_at(li, gi, fold),
                });
            }
        }
    }

    let mut gamma_order: Vec<usize> = (0..grid.gamma_values.len()).collect();
    gamma_order.sort_by(|&a, &b| grid.gamma_values[b].total_cmp(&grid.gamma_values[a]));
    let mut best: Option<(f64, usize, usize)> = None;
    for li in 0..grid.lambda_values.len() {
        for &gi in &gamma_order {
            let mean = (0..grid.folds).map(|f| error_at(li, gi, f)).sum::<f64>() / grid.folds as f64;
            if best.is_none_or(|(m, _, _)| mean < m) {
                best = Some((mean, li, gi));
            }
        }
    }
    let (_, li, gi) = best.expect("non-empty grid");
    Ok(CvResult {
        lambda: grid.lambda_values[li],
        gamma: grid.gamma_values[gi],
        table,
    })
}

/// Per-group random split; each group keeps `round(test_fraction * n_k)` rows (at least one)
/// for testing.
pub fn train_test_split(
    data: &GroupedDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(GroupedDataset, GroupedDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let mut train_rows = Vec::with_capacity(data.n_groups());
    let mut test_rows = Vec::with_capacity(data.n_groups());
    for g in data.groups() {
        let n = g.n_samples();
        let n_test = ((test_fraction * n as f64).round() as usize).max(1);
        if n < n_test + 2 {
            return Err(Error::InsufficientSamples {
                group: g.id.clone(),
                n,
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (test, train) = perm.split_at(n_test);
        let (mut test, mut train) = (test.to_vec(), train.to_vec());
        test.sort_unstable();
        train.sort_unstable();
        test_rows.push(test);
        train_rows.push(train);
    }
    Ok((data.select_rows(&train_rows)?, data.select_rows(&test_rows)?))
}

/// Coefficients mapped from the standardized scale back to raw units, `b_jk s_y,k / s_x,jk`.
pub fn raw_scale_coefficients(b: &CoefficientMatrix, record: &StandardizationRecord) -> Result<Array2<f64>> {
    if b.n_groups() != record.groups.len() {
        return Err(Error::DimensionMismatch("record does not match the coefficients".into()));
    }
    let mut raw: Array2<f64> = (**b).clone();
    for (k, s) in record.groups.iter().enumerate() {
        let mut col = raw.column_mut(k);
        col *= s.y_scale;
        col /= &s.x_scale;
    }
    Ok(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSettings {
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub replicates: usize,
    pub tau_scheme: TauScheme,
    pub opts: SolverOptions,
    pub test_fraction: f64,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::FusedL2, Method::Pooled, Method::Subgroupwise],
            grid: GridSpec::default(),
            replicates: 20,
            tau_scheme: TauScheme::Uniform,
            opts: SolverOptions::default(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub replicate: usize,
    pub method: Method,
    pub metric: &'static str,
    pub subgroup: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub replicate: usize,
    pub method: Method,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub replicate: usize,
    /// `None` when the replicate failed before any method ran.
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Results of [`run_comparison`]. Metric records are deterministic; wall-clock timings are
/// kept apart from them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub records: Vec<MetricRecord>,
    pub timings: Vec<TimingRecord>,
    pub failures: Vec<FailureRecord>,
}

pub const METRIC_WEIGHTED_RMSE: &str = "weighted_rmse";
pub const METRIC_SUBGROUP_RMSE: &str = "rmse";
pub const METRIC_AUROC: &str = "auroc";
pub const METRIC_LAMBDA: &str = "lambda";
pub const METRIC_GAMMA: &str = "gamma";

impl ComparisonReport {
    /// Per-replicate values of an overall (not per-subgroup) metric.
    pub fn values(&self, method: Method, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.metric == metric && r.subgroup.is_none())
            .map(|r| r.value)
            .collect()
    }

    /// Mean and sample standard deviation of weighted RMSE and AUROC per method.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut methods: Vec<Method> = self.records.iter().map(|r| r.method).collect();
        methods.sort_unstable();
        methods.dedup();
        let mut rows = Vec::new();
        for method in methods {
            for metric in [METRIC_WEIGHTED_RMSE, METRIC_AUROC] {
                let values = self.values(method, metric);
                if values.is_empty() {
                    continue;
                }
                let (mean, sd) = mean_sd(&values);
                rows.push(SummaryRow {
                    method,
                    metric,
                    mean,
                    sd,
                    count: values.len(),
                });
            }
        }
        rows
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct MethodOutcome {
    records: Vec<MetricRecord>,
    seconds: f64,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_method(
    replicate: usize,
    method: Method,
    train: &GroupedDataset,
    test: &GroupedDataset,
    truth: &Array2<bool>,
    tau: &FusionWeights,
    grid: &CvGrid,
    opts: &SolverOptions,
) -> Result<MethodOutcome> {
    let start = Instant::now();
    let cv = kfold_cv(train, method, grid, tau, opts)?;
    let (train_std, record) = train.standardize_by_group()?;
    let fit = fit_method(&train_std, method, cv.lambda, cv.gamma, tau, opts, None)?;
    let predictions = predict(test, &fit.coefficients, &record)?;
    let seconds = start.elapsed().as_secs_f64();

    let (weighted, per_group) = group_errors(&predictions, test)?;
    let raw = raw_scale_coefficients(&fit.coefficients, &record)?;
    let auroc = auroc_active(&raw.mapv(f64::abs), truth)?;
    let record = |metric, subgroup, value| MetricRecord {
        replicate,
        method,
        metric,
        subgroup,
        value,
    };
    let mut records = vec![record(METRIC_WEIGHTED_RMSE, None, weighted)];
    records.extend(
        test.groups()
            .iter()
            .zip(per_group)
            .map(|(g, v)| record(METRIC_SUBGROUP_RMSE, Some(g.id.clone()), v)),
    );
    records.push(record(METRIC_AUROC, None, auroc));
    records.push(record(METRIC_LAMBDA, None, cv.lambda));
    if method.uses_gamma() {
        records.push(record(METRIC_GAMMA, None, cv.gamma));
    }
    Ok(MethodOutcome { records, seconds })
}

type ReplicateOutcome = std::result::Result<Vec<(Method, Result<MethodOutcome>)>, Error>;

fn run_replicate(sim: &SimulationConfig, settings: &ComparisonSettings, replicate: usize) -> ReplicateOutcome {
    let sim = SimulationConfig {
        seed: derive_seed(sim.seed, STREAM_REPLICATE + replicate as u64),
        ..sim.clone()
    };
    let simulated = simulate(&sim)?;
    let (train, test) = train_test_split(&simulated.data, settings.test_fraction, sim.seed)?;
    let tau = settings.tau_scheme.weights(&train)?;
    let grid = GridSpec {
        seed: derive_seed(settings.grid.seed, replicate as u64),
        ..settings.grid.clone()
    }
    .resolve(&train)?;
    let truth = simulated.truth.active_sets();
    Ok(settings
        .methods
        .iter()
        .map(|&m| (m, evaluate_method(replicate, m, &train, &test, &truth, &tau, &grid, &settings.opts)))
        .collect())
}

/// Simulates `settings.replicates` datasets from `sim` and scores every method on each.
///
/// Per replicate: an 80/20 (by default) per-group split, `(lambda, gamma)` chosen by CV on
/// the training part, a refit on the whole training part, then test weighted RMSE,
/// per-subgroup RMSE and AUROC of the raw-scale `|B|` against the true active sets.
/// Replicates run in parallel and are reported in order. Failures are recorded and do
/// not stop the run.
pub fn run_comparison(sim: &SimulationConfig, settings: &ComparisonSettings) -> Result<ComparisonReport> {
    sim.validate()?;
    settings.opts.validated()?;
    if settings.methods.is_empty() || settings.replicates == 0 {
        return Err(Error::InvalidParameter("comparison needs at least one method and replicate".into()));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| run_replicate(sim, settings, r))
        .collect();

    let mut report = ComparisonReport::default();
    for (replicate, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Err(e) => report.failures.push(FailureRecord {
                replicate,
                method: None,
                message: e.to_string(),
            }),
            Ok(methods) => {
                for (method, result) in methods {
                    match result {
                        Ok(outcome) => {
                            report.records.extend(outcome.records);
                            report.timings.push(TimingRecord {
                                replicate,
                                method,
                                seconds: outcome.seconds,
                            });
                        }
                        Err(e) => report.failures.push(FailureRecord {
                            replicate,
                            method: Some(method),
                            message: e.to_string(),
                        }),
                    }
                }
            }
        }
    }
    Ok(report)
}
