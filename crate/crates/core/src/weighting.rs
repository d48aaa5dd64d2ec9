//! Fusion weights `tau` derived from between-group covariate similarity.
//!
//! Both data-driven schemes compute a distance `d(k, k')` between groups and set
//! `tau_kk' = 1 - d(k, k') / d_max`. Covariates are first standardized over the pooled
//! sample so that no single covariate's scale dominates.

use ndarray::{Array1, Array2, Axis};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, log_det_cholesky};
use crate::model::FusionWeights;

/// Default ridge added to each sample covariance.
pub const DEFAULT_RIDGE: f64 = 0.1;

/// Multivariate normal summary of one group's covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGaussianModel {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GroupGaussianModel {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let p = mean.len();
        if covariance.dim() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {:?}, mean has length {p}",
                covariance.dim()
            )));
        }
        cholesky(&covariance)?;
        Ok(Self { mean, covariance })
    }

    /// Sample mean and unbiased sample covariance plus `ridge * I`.
    pub fn fit(x: &Array2<f64>, ridge: f64) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 rows to estimate a covariance, got {n}"
            )));
        }
        if !(ridge > 0.0) {
            return Err(Error::InvalidParameter(format!("ridge = {ridge} must be > 0")));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let mut covariance = centered.t().dot(&centered) / (n as f64 - 1.0);
        covariance.diag_mut().mapv_inplace(|v| v + ridge);
        Self::new(mean, covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `KL(P || Q)` for multivariate normals.
pub fn gaussian_kl(p: &GroupGaussianModel, q: &GroupGaussianModel) -> Result<f64> {
    let dim = p.dim();
    if q.dim() != dim {
        return Err(Error::DimensionMismatch("models have different dimensions".into()));
    }
    let lp = cholesky(&p.covariance)?;
    let lq = cholesky(&q.covariance)?;
    let q_inv = cholesky_inverse(&lq);
    let trace: f64 = (0..dim).map(|i| q_inv.row(i).dot(&p.covariance.column(i))).sum();
    let diff = &q.mean - &p.mean;
    let mahalanobis = diff.dot(&q_inv.dot(&diff));
    Ok(0.5 * (trace + mahalanobis - dim as f64 + log_det_cholesky(&lq) - log_det_cholesky(&lp)))
}

/// `(KL(P || Q) + KL(Q || P)) / 2`.
pub fn symmetrized_kl(p: &GroupGaussianModel, q: &GroupGaussianModel) -> Result<f64> {
    Ok(0.5 * (gaussian_kl(p, q)? + gaussian_kl(q, p)?))
}

/// Pairwise symmetrized KL matrix between models (zero diagonal).
pub fn kl_distance_matrix(models: &[GroupGaussianModel]) -> Result<Array2<f64>> {
    let k = models.len();
    let mut d = Array2::zeros((k, k));
    for a in 0..k {
        for b in (a + 1)..k {
            let v = symmetrized_kl(&models[a], &models[b])?;
            d[[a, b]] = v;
            d[[b, a]] = v;
        }
    }
    Ok(d)
}

/// `tau = 1 - d / d_max` off the diagonal.
///
/// When every off-diagonal distance is the same (including all zero) the weights are all 1.
pub fn tau_from_distances(distances: &Array2<f64>) -> Result<FusionWeights> {
    let k = distances.nrows();
    if distances.ncols() != k {
        return Err(Error::DimensionMismatch("distance matrix must be square".into()));
    }
    let off: Vec<f64> = (0..k)
        .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
        .map(|(a, b)| distances[[a, b]])
        .collect();
    if let Some(bad) = off.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidParameter(format!("invalid distance {bad}")));
    }
    let d_max = off.iter().copied().fold(0.0, f64::max);
    let d_min = off.iter().copied().fold(f64::INFINITY, f64::min);
    if off.is_empty() || d_max - d_min <= 1e-12 * d_max {
        return Ok(FusionWeights::uniform(k));
    }
    let mut tau = Array2::zeros((k, k));
    for a in 0..k {
        for b in (a + 1)..k {
            let t = (1.0 - distances[[a, b]] / d_max).clamp(0.0, 1.0);
            tau[[a, b]] = t;
            tau[[b, a]] = t;
        }
    }
    FusionWeights::new(tau)
}

/// Covariates of every group standardized by the pooled column means and standard deviations.
fn pooled_standardized(data: &GroupedDataset) -> Vec<Array2<f64>> {
    let (stacked, _) = data.stacked();
    let n = stacked.nrows() as f64;
    let mean = stacked.mean_axis(Axis(0)).expect("non-empty");
    let sd = if n > 1.0 {
        let centered = &stacked - &mean;
        centered
            .map_axis(Axis(0), |c| (c.dot(&c) / (n - 1.0)).sqrt())
            .mapv(|s| if s > 0.0 { s } else { 1.0 })
    } else {
        Array1::ones(mean.len())
    };
    data.groups().iter().map(|g| (&g.x - &mean) / &sd).collect()
}

fn require_pairs(data: &GroupedDataset) -> Result<()> {
    if data.n_groups() < 2 {
        return Err(Error::InvalidParameter(
            "fusion weights need at least two groups".into(),
        ));
    }
    Ok(())
}

/// Euclidean distance between group covariate means.
pub fn mean_distances(data: &GroupedDataset) -> Result<Array2<f64>> {
    require_pairs(data)?;
    let means: Vec<Array1<f64>> = pooled_standardized(data)
        .iter()
        .map(|x| x.mean_axis(Axis(0)).expect("non-empty group"))
        .collect();
    let k = means.len();
    Ok(Array2::from_shape_fn((k, k), |(a, b)| {
        let d = &means[a] - &means[b];
        d.dot(&d).sqrt()
    }))
}

pub fn tau_mean_distance(data: &GroupedDataset) -> Result<FusionWeights> {
    tau_from_distances(&mean_distances(data)?)
}

/// Gaussian models of each group's (pooled-standardized) covariates.
pub fn fit_group_models(data: &GroupedDataset, ridge: f64) -> Result<Vec<GroupGaussianModel>> {
    pooled_standardized(data)
        .iter()
        .zip(data.groups())
        .map(|(x, g)| {
            GroupGaussianModel::fit(x, ridge).map_err(|e| match e {
                Error::InvalidData(msg) => Error::InvalidData(format!("group `{}`: {msg}", g.id)),
                other => other,
            })
        })
        .collect()
}

/// Symmetrized KL divergence between ridge-regularized Gaussian fits of each group.
pub fn kl_distances(data: &GroupedDataset, ridge: f64) -> Result<Array2<f64>> {
    require_pairs(data)?;
    let models = fit_group_models(data, ridge)?;
    let d = kl_distance_matrix(&models)?;
    let ids = data.group_ids();
    for a in 0..d.nrows() {
        for b in 0..d.ncols() {
            if !d[[a, b]].is_finite() {
                return Err(Error::NonFiniteKl(ids[a].clone(), ids[b].clone()));
            }
        }
    }
    Ok(d)
}

pub fn tau_symmetrized_kl(data: &GroupedDataset, ridge: f64) -> Result<FusionWeights> {
    tau_from_distances(&kl_distances(data, ridge)?)
}

/// Explicit `tau` values by group id; unlisted pairs default to 1.
pub fn tau_manual(group_ids: &[String], entries: &[(String, String, f64)]) -> Result<FusionWeights> {
    let k = group_ids.len();
    let index = |id: &str| {
        group_ids
            .iter()
            .position(|g| g == id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))
    };
    let mut tau = FusionWeights::uniform(k).as_array().clone();
    let mut set = vec![vec![false; k]; k];
    for (a, b, value) in entries {
        let (ia, ib) = (index(a)?, index(b)?);
        if ia == ib {
            return Err(Error::InvalidParameter(format!("fusion weight for `{a}` with itself")));
        }
        if !(0.0..=1.0).contains(value) {
            return Err(Error::InvalidParameter(format!(
                "fusion weight {value} for ({a}, {b}) outside [0, 1]"
            )));
        }
        if set[ia][ib] {
            return Err(Error::InvalidParameter(format!("duplicate fusion weight for ({a}, {b})")));
        }
        set[ia][ib] = true;
        set[ib][ia] = true;
        tau[[ia, ib]] = *value;
        tau[[ib, ia]] = *value;
    }
    FusionWeights::new(tau)
}

/// Manual distances converted with the same `1 - d / d_max` rule; unlisted pairs get distance 0.
pub fn tau_manual_distances(
    group_ids: &[String],
    entries: &[(String, String, f64)],
) -> Result<FusionWeights> {
    let k = group_ids.len();
    let mut d = Array2::zeros((k, k));
    let mut seen = std::collections::HashSet::new();
    for (a, b, value) in entries {
        let ia = group_ids.iter().position(|g| g == a).ok_or_else(|| Error::UnknownGroup(a.clone()))?;
        let ib = group_ids.iter().position(|g| g == b).ok_or_else(|| Error::UnknownGroup(b.clone()))?;
        if ia == ib || !seen.insert((ia.min(ib), ia.max(ib))) {
            return Err(Error::InvalidParameter(format!("invalid or duplicate pair ({a}, {b})")));
        }
        d[[ia, ib]] = *value;
        d[[ib, ia]] = *value;
    }
    tau_from_distances(&d)
}

/// How fusion weights are obtained for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum TauScheme {
    Uniform,
    MeanDistance,
    SymmetrizedKl { ridge: f64 },
    Fixed(FusionWeights),
}

impl TauScheme {
    pub fn weights(&self, data: &GroupedDataset) -> Result<FusionWeights> {
        match self {
            Self::Uniform => Ok(FusionWeights::uniform(data.n_groups())),
            Self::MeanDistance => tau_mean_distance(data),
            Self::SymmetrizedKl { ridge } => tau_symmetrized_kl(data, *ridge),
            Self::Fixed(tau) => {
                if tau.n_groups() != data.n_groups() {
                    return Err(Error::DimensionMismatch(format!(
                        "fixed weights are for {} groups, data has {}",
                        tau.n_groups(),
                        data.n_groups()
                    )));
                }
                Ok(tau.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Group;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    fn assert_valid(tau: &FusionWeights) {
        let t = tau.as_array();
        for a in 0..t.nrows() {
            assert_eq!(t[[a, a]], 0.0);
            for b in 0..t.ncols() {
                assert_eq!(t[[a, b]], t[[b, a]]);
                assert!((0.0..=1.0).contains(&t[[a, b]]));
            }
        }
    }

    #[test]
    fn distance_scaling_rule() {
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let tau = tau_from_distances(&d).unwrap();
        assert_eq!(tau.get(0, 1), 0.5);
        assert_eq!(tau.get(0, 2), 0.0);
        assert_eq!(tau.get(1, 2), 0.5);
        assert_eq!(tau_from_distances(&Array2::zeros((3, 3))).unwrap(), FusionWeights::uniform(3));
        let equal = array![[0.0, 2.0, 2.0], [2.0, 0.0, 2.0], [2.0, 2.0, 0.0]];
        assert_eq!(tau_from_distances(&equal).unwrap(), FusionWeights::uniform(3));
    }

    #[test]
    fn mean_distance_on_shifted_groups() {
        // Groups whose means lie at 0, 1 and 2 along the first axis; the second column is
        // symmetric noise so pooled standardization scales both axes uniformly per axis.
        let mk = |shift: f64| array![[shift - 1.0, 1.0], [shift + 1.0, -1.0], [shift, 0.0]];
        let data = GroupedDataset::new(vec![
            Group::new("a", mk(0.0), Array1::zeros(3)),
            Group::new("b", mk(1.0), Array1::zeros(3)),
            Group::new("c", mk(2.0), Array1::zeros(3)),
        ])
        .unwrap();
        let tau = tau_mean_distance(&data).unwrap();
        assert!((tau.get(0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(tau.get(0, 2), 0.0);
        assert!((tau.get(1, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_fully_fused() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((8, 2), |_| rng.random::<f64>());
        let other = x.mapv(|v| v * 3.0 + 5.0);
        let data = GroupedDataset::new(vec![
            Group::new("a", x.clone(), Array1::zeros(8)),
            Group::new("b", x.clone(), Array1::zeros(8)),
            Group::new("c", other, Array1::zeros(8)),
        ])
        .unwrap();
        for tau in [tau_mean_distance(&data).unwrap(), tau_symmetrized_kl(&data, 0.1).unwrap()] {
            assert_valid(&tau);
            assert!((tau.get(0, 1) - 1.0).abs() < 1e-12);
            assert_eq!(tau.get(0, 2).min(tau.get(1, 2)), 0.0);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let eye = Array2::eye(3);
        let p = GroupGaussianModel::new(array![0.0, 0.0, 0.0], eye.clone()).unwrap();
        let q = GroupGaussianModel::new(array![1.0, -2.0, 0.5], eye).unwrap();
        assert!((symmetrized_kl(&p, &q).unwrap() - 0.5 * 5.25).abs() < 1e-12);
        assert_eq!(symmetrized_kl(&p, &p).unwrap(), 0.0);

        let (s1, s2) = (2.0f64, 0.5f64);
        let a = GroupGaussianModel::new(array![0.0], array![[s1]]).unwrap();
        let b = GroupGaussianModel::new(array![0.0], array![[s2]]).unwrap();
        let expected = 0.25 * (s1 / s2 + s2 / s1 - 2.0);
        assert!((symmetrized_kl(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn fitted_covariance_is_regularized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // More covariates than rows: the sample covariance alone would be singular.
        let x = Array2::from_shape_fn((3, 5), |_| rng.random::<f64>());
        let m = GroupGaussianModel::fit(&x, 0.1).unwrap();
        let ev = crate::linalg::symmetric_eigenvalues(&m.covariance);
        assert!(ev[0] >= 0.1 - 1e-10);
        assert!(GroupGaussianModel::fit(&x, 0.0).is_err());
    }

    #[test]
    fn sample_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let groups: Vec<Group> = (0..3)
            .map(|k| {
                Group::new(
                    format!("g{k}"),
                    Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() + k as f64 * 0.3),
                    Array1::zeros(6),
                )
            })
            .collect();
        let data = GroupedDataset::new(groups.clone()).unwrap();
        let reversed = GroupedDataset::new(
            groups
                .iter()
                .map(|g| {
                    let idx: Vec<usize> = (0..6).rev().collect();
                    Group::new(g.id.clone(), g.x.select(Axis(0), &idx), g.y.clone())
                })
                .collect(),
        )
        .unwrap();
        let a = tau_mean_distance(&data).unwrap();
        let b = tau_mean_distance(&reversed).unwrap();
        assert!((a.as_array() - b.as_array()).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn manual_weights() {
        let tau = tau_manual(&ids(3), &[]).unwrap();
        assert_eq!(tau, FusionWeights::uniform(3));
        let tau = tau_manual(&ids(3), &[("1".into(), "2".into(), 0.1)]).unwrap();
        assert_eq!(tau.get(0, 1), 0.1);
        assert_eq!(tau.get(1, 0), 0.1);
        assert_eq!(tau.get(0, 2), 1.0);
        assert!(tau_manual(&ids(3), &[("1".into(), "2".into(), 1.5)]).is_err());
        assert!(tau_manual(&ids(3), &[("1".into(), "9".into(), 0.5)]).is_err());
        assert!(tau_manual(
            &ids(3),
            &[("1".into(), "2".into(), 0.5), ("2".into(), "1".into(), 0.4)]
        )
        .is_err());

        let tau = tau_manual_distances(&ids(3), &[("1".into(), "3".into(), 1.0), ("2".into(), "3".into(), 0.1)]).unwrap();
        assert_eq!(tau.get(0, 2), 0.0);
        assert!((tau.get(1, 2) - 0.9).abs() < 1e-12);
        assert_eq!(tau.get(0, 1), 1.0);
    }

    #[test]
    fn needs_two_groups() {
        let data = GroupedDataset::new(vec![Group::new("a", array![[1.0], [2.0]], array![0.0, 0.0])]).unwrap();
        assert!(tau_mean_distance(&data).is_err());
        assert!(tau_symmetrized_kl(&data, 0.1).is_err());
    }
}
