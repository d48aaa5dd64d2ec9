//! Parameter and result types shared by every solver.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// The `p x K` matrix `B = [beta_1 ... beta_K]`; column `k` holds subgroup `k`'s coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(Array2<f64>);

impl CoefficientMatrix {
    pub fn zeros(n_features: usize, n_groups: usize) -> Self {
        Self(Array2::zeros((n_features, n_groups)))
    }

    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "coefficient matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn n_features(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Largest absolute difference between any two columns.
    pub fn max_column_discrepancy(&self) -> f64 {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .fold(0.0, f64::max)
    }
}

impl Deref for CoefficientMatrix {
    type Target = Array2<f64>;

    fn deref(&self) -> &Array2<f64> {
        &self.0
    }
}

impl DerefMut for CoefficientMatrix {
    fn deref_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }
}

/// Symmetric `K x K` matrix of pairwise fusion strengths `tau`.
///
/// Always symmetric with a zero diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Array2<f64>);

impl FusionWeights {
    pub fn new(tau: Array2<f64>) -> Result<Self> {
        let k = tau.nrows();
        if tau.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "fusion weights must be square, got {}x{}",
                k,
                tau.ncols()
            )));
        }
        for a in 0..k {
            if tau[[a, a]] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "fusion weight diagonal entry {a} is {}, must be 0",
                    tau[[a, a]]
                )));
            }
            for b in 0..k {
                let v = tau[[a, b]];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!(
                        "fusion weight ({a},{b}) = {v} outside [0, 1]"
                    )));
                }
                if v != tau[[b, a]] {
                    return Err(Error::InvalidParameter(format!(
                        "fusion weights not symmetric at ({a},{b})"
                    )));
                }
            }
        }
        Ok(Self(tau))
    }

    /// Unweighted fusion: every off-diagonal entry is 1.
    pub fn uniform(n_groups: usize) -> Self {
        let mut tau = Array2::ones((n_groups, n_groups));
        tau.diag_mut().fill(0.0);
        Self(tau)
    }

    pub fn n_groups(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[[a, b]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    /// Row sums `d_k = sum_k' tau_kk'`.
    pub fn degrees(&self) -> Vec<f64> {
        self.0.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Unordered pairs `(k, k')`, `k < k'`, in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let k = self.n_groups();
        (0..k).flat_map(move |a| ((a + 1)..k).map(move |b| (a, b, self.0[[a, b]])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionNorm {
    L2,
    L1,
}

impl fmt::Display for FusionNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionNorm::L2 => f.write_str("l2"),
            FusionNorm::L1 => f.write_str("l1"),
        }
    }
}

impl FromStr for FusionNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(FusionNorm::L2),
            "l1" => Ok(FusionNorm::L1),
            other => Err(Error::InvalidParameter(format!("unknown fusion norm `{other}`"))),
        }
    }
}

/// Penalty strengths. `epsilon` is the smoothing accuracy used only by the l1 solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub fusion_norm: FusionNorm,
    pub epsilon: f64,
}

impl PenaltyConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn new(lambda: f64, gamma: f64, fusion_norm: FusionNorm) -> Result<Self> {
        Self {
            lambda,
            gamma,
            fusion_norm,
            epsilon: Self::DEFAULT_EPSILON,
        }
        .validated()
    }

    pub fn l2(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, gamma, FusionNorm::L2)
    }

    pub fn l1(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, gamma, FusionNorm::L1)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon = {} must be > 0",
                self.epsilon
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Threshold on `|f_t - f_{t-1}| / max(1, |f_{t-1}|)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-9,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn new(max_iter: usize, tol: f64) -> Result<Self> {
        Self {
            max_iter,
            tol,
            ..Self::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol = {} must be > 0", self.tol)));
        }
        Ok(self)
    }

    /// Relative objective change used as the stopping rule by all iterative solvers.
    pub fn relative_change(previous: f64, current: f64) -> f64 {
        (current - previous).abs() / previous.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: CoefficientMatrix,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// Objective value of the returned coefficients.
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fusion_weights_validation() {
        assert!(FusionWeights::new(array![[0.0, 0.5], [0.5, 0.0]]).is_ok());
        assert!(FusionWeights::new(array![[0.0, 0.5], [0.4, 0.0]]).is_err());
        assert!(FusionWeights::new(array![[0.1, 0.5], [0.5, 0.0]]).is_err());
        assert!(FusionWeights::new(array![[0.0, 1.5], [1.5, 0.0]]).is_err());
        assert!(FusionWeights::new(array![[0.0, f64::NAN], [f64::NAN, 0.0]]).is_err());
        let u = FusionWeights::uniform(3);
        assert_eq!(u.degrees(), vec![2.0, 2.0, 2.0]);
        assert_eq!(u.pairs().count(), 3);
    }

    #[test]
    fn penalty_and_options_validation() {
        assert!(PenaltyConfig::l2(-1.0, 0.0).is_err());
        assert!(PenaltyConfig::l2(1.0, -0.1).is_err());
        assert!(PenaltyConfig::l1(1.0, 1.0).unwrap().with_epsilon(0.0).is_err());
        assert!(SolverOptions::new(0, 1e-6).is_err());
        assert!(SolverOptions::new(10, 0.0).is_err());
        assert_eq!("L1".parse::<FusionNorm>().unwrap(), FusionNorm::L1);
    }

    #[test]
    fn coefficient_matrix_rejects_nan() {
        assert!(CoefficientMatrix::new(array![[1.0, f64::NAN]]).is_err());
        let b = CoefficientMatrix::new(array![[1.0, 3.0], [0.0, 0.5]]).unwrap();
        assert_eq!(b.max_column_discrepancy(), 2.0);
    }
}
