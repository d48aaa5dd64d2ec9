//! Synthetic grouped regression data.
//!
//! Covariates for group `k` are drawn from `N(mu_k, Sigma_k)`. A subset `V0` of `K0` groups,
//! chosen as the groups whose covariate models are closest in summed symmetrized KL
//! divergence, share one coefficient vector; every other group gets its own. Coefficient
//! vectors are sparse, with nonzero entries drawn from a standard normal restricted to
//! `|beta| >= trunc_halfwidth`.

use itertools::Itertools;
use ndarray::{Array1, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::dataset::{Group, GroupedDataset};
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::weighting::{kl_distance_matrix, GroupGaussianModel};

const STREAM_MODELS: u64 = 1;
const STREAM_COVARIATES: u64 = 2;
const STREAM_COEFFICIENTS: u64 = 3;
const STREAM_RESPONSES: u64 = 4;

/// Largest `K` for which the shared subset is found by exhaustive search.
pub const MAX_EXHAUSTIVE_GROUPS: usize = 12;

/// Independent random stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A seed for a sub-component, derived deterministically from `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupModels {
    /// Random means `N(0, 0.5 I)` and covariances `W W^T / p + 0.1 I`, `W` standard normal.
    Synthetic,
    Given(Vec<GroupGaussianModel>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_groups: usize,
    /// `K0`, the number of groups sharing one coefficient vector.
    pub n_shared: usize,
    pub n_features: usize,
    pub n_total: usize,
    /// One entry per group summing to 1; `None` uses [`default_proportions`].
    pub group_proportions: Option<Vec<f64>>,
    pub sparsity: f64,
    pub trunc_halfwidth: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub group_models: GroupModels,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_groups: 9,
            n_shared: 5,
            n_features: 200,
            n_total: 250,
            group_proportions: None,
            sparsity: 0.1,
            trunc_halfwidth: 0.1,
            noise_sd: 1.0,
            seed: 0,
            group_models: GroupModels::Synthetic,
        }
    }
}

/// Skewed default: one large group and progressively smaller ones.
pub fn default_proportions(n_groups: usize) -> Vec<f64> {
    if n_groups == 1 {
        return vec![1.0];
    }
    let weights: Vec<f64> = (0..n_groups)
        .map(|k| {
            if k == 0 {
                2.5
            } else {
                1.0 + (n_groups - 1 - k) as f64 / (2.0 * (n_groups - 1) as f64)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

impl SimulationConfig {
    pub fn proportions(&self) -> Vec<f64> {
        self.group_proportions
            .clone()
            .unwrap_or_else(|| default_proportions(self.n_groups))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.n_features == 0 {
            return Err(Error::InvalidParameter("need at least one group and one covariate".into()));
        }
        if self.n_shared == 0 || self.n_shared > self.n_groups {
            return Err(Error::InvalidParameter(format!(
                "K0 = {} must lie in 1..={}",
                self.n_shared, self.n_groups
            )));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sparsity = {} must lie in (0, 1]",
                self.sparsity
            )));
        }
        if !(self.trunc_halfwidth >= 0.0 && self.trunc_halfwidth < 5.0) {
            return Err(Error::InvalidParameter(format!(
                "trunc_halfwidth = {} must lie in [0, 5)",
                self.trunc_halfwidth
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sd = {} must be >= 0", self.noise_sd)));
        }
        if let GroupModels::Given(models) = &self.group_models {
            if models.len() != self.n_groups || models.iter().any(|m| m.dim() != self.n_features) {
                return Err(Error::DimensionMismatch(
                    "given group models do not match K and p".into(),
                ));
            }
        }
        self.group_sizes().map(|_| ())
    }

    /// Group sizes by the largest-remainder method; they sum exactly to `n_total`.
    pub fn group_sizes(&self) -> Result<Vec<usize>> {
        let props = self.proportions();
        if props.len() != self.n_groups {
            return Err(Error::InvalidParameter(format!(
                "{} proportions given for {} groups",
                props.len(),
                self.n_groups
            )));
        }
        if props.iter().any(|p| !(*p >= 0.0)) || (props.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(
                "group proportions must be nonnegative and sum to 1".into(),
            ));
        }
        let quotas: Vec<f64> = props.iter().map(|p| p * self.n_total as f64).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let short = self.n_total - sizes.iter().sum::<usize>();
        let order: Vec<usize> = (0..self.n_groups)
            .sorted_by(|&a, &b| {
                let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
                rb.total_cmp(&ra).then(a.cmp(&b))
            })
            .collect();
        for &k in order.iter().take(short) {
            sizes[k] += 1;
        }
        if let Some(k) = sizes.iter().position(|&n| n < 2) {
            return Err(Error::InvalidParameter(format!(
                "group {} would have {} sample(s); each group needs at least 2",
                k + 1,
                sizes[k]
            )));
        }
        Ok(sizes)
    }
}

/// True coefficients and the groups that share them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `p x K`.
    pub coefficients: Array2<f64>,
    /// `V0`, sorted ascending.
    pub shared: Vec<usize>,
}

impl GroundTruth {
    pub fn active_sets(&self) -> Array2<bool> {
        self.coefficients.mapv(|v| v != 0.0)
    }
}

/// Identifiers used for simulated groups: `g1`, `g2`, ...
pub fn group_id(k: usize) -> String {
    format!("g{}", k + 1)
}

/// The configured covariate models, synthesizing them from the seed when not given.
pub fn group_models(config: &SimulationConfig) -> Result<Vec<GroupGaussianModel>> {
    match &config.group_models {
        GroupModels::Given(models) => Ok(models.clone()),
        GroupModels::Synthetic => {
            let p = config.n_features;
            let mut rng = stream_rng(config.seed, STREAM_MODELS);
            (0..config.n_groups)
                .map(|_| {
                    let mean = Array1::from_shape_fn(p, |_| {
                        0.5f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
                    });
                    let w = Array2::from_shape_fn((p, p), |_| rng.sample::<f64, _>(StandardNormal));
                    let mut cov = w.dot(&w.t()) / p as f64;
                    cov.diag_mut().mapv_inplace(|v| v + 0.1);
                    GroupGaussianModel::new(mean, cov)
                })
                .collect()
        }
    }
}

/// Draws each group's covariates; responses are left at zero.
pub fn generate_covariates(
    config: &SimulationConfig,
    models: &[GroupGaussianModel],
) -> Result<GroupedDataset> {
    let sizes = config.group_sizes()?;
    if models.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} group models for {} groups",
            models.len(),
            sizes.len()
        )));
    }
    let mut rng = stream_rng(config.seed, STREAM_COVARIATES);
    let groups = models
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(k, (model, &n))| {
            let p = model.dim();
            let chol = cholesky(&model.covariance)?;
            let z = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
            let x = z.dot(&chol.t()) + &model.mean;
            Ok(Group::new(group_id(k), x, Array1::zeros(n)))
        })
        .collect::<Result<Vec<_>>>()?;
    GroupedDataset::new(groups)
}

/// The `K0` groups with the smallest summed pairwise symmetrized KL divergence.
///
/// Exhaustive over subsets in lexicographic order; the first minimum wins ties. `K0 = 1`
/// returns `{0}`.
pub fn select_shared_subset(models: &[GroupGaussianModel], n_shared: usize) -> Result<Vec<usize>> {
    let k = models.len();
    if n_shared == 0 || n_shared > k {
        return Err(Error::InvalidParameter(format!("K0 = {n_shared} must lie in 1..={k}")));
    }
    if n_shared == 1 {
        return Ok(vec![0]);
    }
    if n_shared == k {
        return Ok((0..k).collect());
    }
    if k > MAX_EXHAUSTIVE_GROUPS {
        return Err(Error::InvalidParameter(format!(
            "exhaustive subset search supports at most {MAX_EXHAUSTIVE_GROUPS} groups, got {k}"
        )));
    }
    let d = kl_distance_matrix(models)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for subset in (0..k).combinations(n_shared) {
        let cost: f64 = subset.iter().tuple_combinations().map(|(&a, &b)| d[[a, b]]).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, subset));
        }
    }
    Ok(best.expect("at least one subset").1)
}

/// One sparse coefficient vector: `b_j ~ Bernoulli(sparsity)`, and for `b_j = 1` a standard
/// normal redrawn until `|beta_j| >= halfwidth`.
fn draw_vector<R: Rng>(p: usize, sparsity: f64, halfwidth: f64, rng: &mut R) -> Result<Array1<f64>> {
    let active = Bernoulli::new(sparsity).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut beta = Array1::zeros(p);
    for j in 0..p {
        if active.sample(rng) {
            beta[j] = loop {
                let v: f64 = rng.sample(StandardNormal);
                if v.abs() >= halfwidth {
                    break v;
                }
            };
        }
    }
    Ok(beta)
}

/// The shared vector is drawn first, then one vector per group outside `V0` in group order.
pub fn draw_coefficients(config: &SimulationConfig, shared: &[usize]) -> Result<GroundTruth> {
    let (p, k) = (config.n_features, config.n_groups);
    if shared.is_empty() || shared.iter().any(|&g| g >= k) {
        return Err(Error::InvalidParameter("shared subset must be non-empty and within range".into()));
    }
    let mut rng = stream_rng(config.seed, STREAM_COEFFICIENTS);
    let common = draw_vector(p, config.sparsity, config.trunc_halfwidth, &mut rng)?;
    let mut coefficients = Array2::zeros((p, k));
    for g in 0..k {
        let column = if shared.contains(&g) {
            common.clone()
        } else {
            draw_vector(p, config.sparsity, config.trunc_halfwidth, &mut rng)?
        };
        coefficients.column_mut(g).assign(&column);
    }
    let mut shared = shared.to_vec();
    shared.sort_unstable();
    shared.dedup();
    Ok(GroundTruth { coefficients, shared })
}

/// `y_k = X_k beta_k + noise_sd * N(0, 1)`.
pub fn generate_responses(
    data: &GroupedDataset,
    truth: &GroundTruth,
    noise_sd: f64,
    seed: u64,
) -> Result<GroupedDataset> {
    if truth.coefficients.dim() != (data.n_features(), data.n_groups()) {
        return Err(Error::DimensionMismatch("ground truth does not match the covariates".into()));
    }
    let mut rng = stream_rng(seed, STREAM_RESPONSES);
    let groups = data
        .groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let signal = g.x.dot(&truth.coefficients.column(k));
            let noise = Array1::from_shape_fn(g.n_samples(), |_| rng.sample::<f64, _>(StandardNormal));
            Group::new(g.id.clone(), g.x.clone(), signal + noise * noise_sd)
        })
        .collect();
    GroupedDataset::new(groups)
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: GroupedDataset,
    pub truth: GroundTruth,
    pub models: Vec<GroupGaussianModel>,
}

/// Full pipeline; a pure function of `config`.
pub fn simulate(config: &SimulationConfig) -> Result<SimulatedData> {
    config.validate()?;
    let models = group_models(config)?;
    let shared = select_shared_subset(&models, config.n_shared)?;
    let covariates = generate_covariates(config, &models)?;
    let truth = draw_coefficients(config, &shared)?;
    let data = generate_responses(&covariates, &truth, config.noise_sd, config.seed)?;
    Ok(SimulatedData { data, truth, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(k0: usize) -> SimulationConfig {
        SimulationConfig {
            n_groups: 4,
            n_shared: k0,
            n_features: 12,
            n_total: 60,
            seed: 9,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn default_design_shapes() {
        let cfg = SimulationConfig::default();
        let sizes = cfg.group_sizes().unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 250);
        let models = group_models(&cfg).unwrap();
        let x = generate_covariates(&cfg, &models).unwrap();
        assert_eq!(x.n_groups(), 9);
        assert_eq!(x.n_features(), 200);
        assert_eq!(x.n_samples(), 250);
        assert_eq!(x.group_sizes(), sizes);
    }

    #[test]
    fn largest_remainder_rounding() {
        let cfg = SimulationConfig {
            n_groups: 3,
            n_total: 10,
            group_proportions: Some(vec![0.34, 0.33, 0.33]),
            ..small(1)
        };
        assert_eq!(cfg.group_sizes().unwrap(), vec![4, 3, 3]);
        let bad = SimulationConfig {
            group_proportions: Some(vec![0.5, 0.4, 0.2]),
            ..cfg.clone()
        };
        assert!(bad.group_sizes().is_err());
        let tiny = SimulationConfig {
            group_proportions: Some(vec![0.98, 0.01, 0.01]),
            ..cfg
        };
        assert!(tiny.group_sizes().is_err());
    }

    #[test]
    fn identity_covariance_recovered_from_large_draw() {
        let p = 3;
        let models = vec![GroupGaussianModel::new(Array1::zeros(p), Array2::eye(p)).unwrap()];
        let cfg = SimulationConfig {
            n_groups: 1,
            n_shared: 1,
            n_features: p,
            n_total: 5000,
            group_models: GroupModels::Given(models.clone()),
            ..SimulationConfig::default()
        };
        let data = generate_covariates(&cfg, &models).unwrap();
        let fit = GroupGaussianModel::fit(&data.group(0).x, 1e-12).unwrap();
        let err = (&fit.covariance - &Array2::<f64>::eye(p)).mapv(|v| v * v).sum().sqrt();
        assert!(err < 0.1, "frobenius error {err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate(&small(2)).unwrap();
        let b = simulate(&small(2)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&SimulationConfig { seed: 10, ..small(2) }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn shared_subset_examples() {
        let eye = Array2::eye(2);
        let models: Vec<_> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&m| GroupGaussianModel::new(array![m, 0.0], eye.clone()).unwrap())
            .collect();
        assert_eq!(select_shared_subset(&models, 2).unwrap(), vec![0, 1]);
        assert_eq!(select_shared_subset(&models, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_shared_subset(&models, 1).unwrap(), vec![0]);
        assert!(select_shared_subset(&models, 0).is_err());
        assert!(select_shared_subset(&models, 4).is_err());
    }

    #[test]
    fn shared_subset_matches_bitmask_enumeration() {
        let cfg = SimulationConfig {
            n_groups: 6,
            n_features: 3,
            ..small(3)
        };
        let models = group_models(&cfg).unwrap();
        let d = kl_distance_matrix(&models).unwrap();
        // Independent oracle: enumerate bitmasks, keep the smallest cost, ties by sorted index list.
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << 6) {
            if mask.count_ones() != 3 {
                continue;
            }
            let members: Vec<usize> = (0..6).filter(|i| mask & (1 << i) != 0).collect();
            let mut cost = 0.0;
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    cost += d[[members[i], members[j]]];
                }
            }
            let better = match &best {
                None => true,
                Some((c, m)) => cost < *c || (cost == *c && members < *m),
            };
            if better {
                best = Some((cost, members));
            }
        }
        assert_eq!(select_shared_subset(&models, 3).unwrap(), best.unwrap().1);
    }

    #[test]
    fn coefficient_draw_properties() {
        let cfg = SimulationConfig {
            n_groups: 5,
            n_features: 200,
            ..SimulationConfig::default()
        };
        let mut nonzero = 0usize;
        let mut total = 0usize;
        for seed in 0..200 {
            let truth = draw_coefficients(&SimulationConfig { seed, ..cfg.clone() }, &[1, 3]).unwrap();
            assert_eq!(truth.coefficients.column(1), truth.coefficients.column(3));
            for &v in truth.coefficients.iter() {
                if v != 0.0 {
                    assert!(v.abs() >= 0.1);
                    nonzero += 1;
                }
                total += 1;
            }
            assert_eq!(truth.active_sets(), truth.coefficients.mapv(|v| v != 0.0));
        }
        let rate = nonzero as f64 / total as f64;
        assert!((rate - 0.1).abs() < 0.01, "rate {rate}");

        let all = draw_coefficients(&cfg, &[0, 1, 2, 3, 4]).unwrap();
        for k in 1..5 {
            assert_eq!(all.coefficients.column(0), all.coefficients.column(k));
        }
    }

    #[test]
    fn response_noise_model() {
        let cfg = SimulationConfig {
            n_groups: 1,
            n_shared: 1,
            n_features: 2,
            n_total: 1000,
            ..SimulationConfig::default()
        };
        let models = group_models(&cfg).unwrap();
        let x = generate_covariates(&cfg, &models).unwrap();
        let truth = GroundTruth {
            coefficients: array![[1.5], [-2.0]],
            shared: vec![0],
        };
        let exact = generate_responses(&x, &truth, 0.0, 1).unwrap();
        assert_eq!(exact.group(0).y, x.group(0).x.dot(&truth.coefficients.column(0)));

        let zero = GroundTruth {
            coefficients: Array2::zeros((2, 1)),
            shared: vec![0],
        };
        let noisy = generate_responses(&x, &zero, 2.0, 1).unwrap();
        let y = &noisy.group(0).y;
        let m = y.mean().unwrap();
        let sd = (y.mapv(|v| (v - m).powi(2)).sum() / 999.0).sqrt();
        assert!((sd - 2.0).abs() < 0.2);
        assert_eq!(noisy, generate_responses(&x, &zero, 2.0, 1).unwrap());
    }

    #[test]
    fn validation_errors() {
        assert!(simulate(&SimulationConfig { n_shared: 5, ..small(1) }).is_err());
        assert!(simulate(&SimulationConfig { sparsity: 0.0, ..small(1) }).is_err());
    }
}
