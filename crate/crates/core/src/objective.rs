//! Penalized objectives and the soft-thresholding primitive.

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, FusionNorm, FusionWeights, PenaltyConfig};

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `sum_k ||y_k - X_k beta_k||^2`.
pub fn residual_sum_of_squares(data: &GroupedDataset, b: &CoefficientMatrix) -> f64 {
    data.groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let r = &g.y - &g.x.dot(&b.column(k));
            r.dot(&r)
        })
        .sum()
}

/// Entrywise `||B||_1`.
pub fn l1_norm(b: &CoefficientMatrix) -> f64 {
    b.iter().map(|v| v.abs()).sum()
}

/// `sum_{k<k'} tau_kk' ||beta_k - beta_k'||`, squared l2 or l1 depending on `norm`.
pub fn fusion_penalty(b: &CoefficientMatrix, tau: &FusionWeights, norm: FusionNorm) -> f64 {
    tau.pairs()
        .filter(|&(_, _, t)| t != 0.0)
        .map(|(a, c, t)| {
            let (ca, cc) = (b.column(a), b.column(c));
            let diff = ca.iter().zip(cc.iter()).map(|(x, y)| x - y);
            let size: f64 = match norm {
                FusionNorm::L2 => diff.map(|d| d * d).sum(),
                FusionNorm::L1 => diff.map(f64::abs).sum(),
            };
            t * size
        })
        .sum()
}

fn check(data: &GroupedDataset, b: &CoefficientMatrix, tau: &FusionWeights) -> Result<()> {
    data.check_coefficients(b)?;
    if tau.n_groups() != data.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "fusion weights are for {} groups, data has {}",
            tau.n_groups(),
            data.n_groups()
        )));
    }
    Ok(())
}

/// Objective with squared-l2 fusion.
pub fn objective_l2(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<f64> {
    objective(data, b, config, tau, FusionNorm::L2)
}

/// Objective with l1 fusion.
pub fn objective_l1(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<f64> {
    objective(data, b, config, tau, FusionNorm::L1)
}

/// Objective for the fusion norm selected in `config`.
pub fn objective_for(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    config: &PenaltyConfig,
    tau: &FusionWeights,
) -> Result<f64> {
    objective(data, b, config, tau, config.fusion_norm)
}

fn objective(
    data: &GroupedDataset,
    b: &CoefficientMatrix,
    config: &PenaltyConfig,
    tau: &FusionWeights,
    norm: FusionNorm,
) -> Result<f64> {
    check(data, b, tau)?;
    let mut total = residual_sum_of_squares(data, b) + config.lambda * l1_norm(b);
    if config.gamma != 0.0 {
        total += config.gamma * fusion_penalty(b, tau, norm);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Group;
    use ndarray::{array, Array1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> GroupedDataset {
        GroupedDataset::new(vec![
            Group::new("1", array![[1.0]], array![1.0]),
            Group::new("2", array![[1.0]], array![0.0]),
        ])
        .unwrap()
    }

    fn random_instance(seed: u64, k: usize, p: usize) -> (GroupedDataset, CoefficientMatrix, FusionWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = (0..k)
            .map(|i| {
                let n = 3 + i;
                Group::new(
                    format!("g{i}"),
                    Array2::from_shape_fn((n, p), |_| rng.random::<f64>() - 0.5),
                    Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5),
                )
            })
            .collect();
        let b = CoefficientMatrix::new(Array2::from_shape_fn((p, k), |_| rng.random::<f64>() - 0.5))
            .unwrap();
        let mut t = Array2::zeros((k, k));
        for a in 0..k {
            for c in (a + 1)..k {
                let v: f64 = rng.random();
                t[[a, c]] = v;
                t[[c, a]] = v;
            }
        }
        (GroupedDataset::new(groups).unwrap(), b, FusionWeights::new(t).unwrap())
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn hand_evaluated_instance() {
        let data = two_point();
        let b = CoefficientMatrix::new(array![[1.0, 0.0]]).unwrap();
        let cfg = PenaltyConfig::l2(1.0, 1.0).unwrap();
        let tau = FusionWeights::uniform(2);
        assert_eq!(objective_l2(&data, &b, &cfg, &tau).unwrap(), 2.0);
        assert_eq!(objective_l1(&data, &b, &cfg, &tau).unwrap(), 2.0);
    }

    #[test]
    fn zero_coefficients_give_response_energy() {
        let (data, _, tau) = random_instance(1, 3, 4);
        let zero = CoefficientMatrix::zeros(4, 3);
        let cfg = PenaltyConfig::l2(0.7, 2.0).unwrap();
        let energy: f64 = data.groups().iter().map(|g| g.y.dot(&g.y)).sum();
        assert!((objective_l2(&data, &zero, &cfg, &tau).unwrap() - energy).abs() < 1e-12);
        assert!((objective_l1(&data, &zero, &cfg, &tau).unwrap() - energy).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_lasso() {
        let (data, b, _) = random_instance(2, 1, 3);
        let cfg = PenaltyConfig::l2(0.4, 5.0).unwrap();
        let g = data.group(0);
        let r = &g.y - &g.x.dot(&b.column(0));
        let lasso = r.dot(&r) + 0.4 * b.iter().map(|v| v.abs()).sum::<f64>();
        let got = objective_l2(&data, &b, &cfg, &FusionWeights::uniform(1)).unwrap();
        assert!((got - lasso).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_have_no_fusion_cost() {
        let (data, _, tau) = random_instance(3, 2, 3);
        let b = CoefficientMatrix::new(array![[0.3, 0.3], [-1.0, -1.0], [0.0, 0.0]]).unwrap();
        let with = objective_l1(&data, &b, &PenaltyConfig::l1(0.5, 9.0).unwrap(), &tau).unwrap();
        let without = objective_l1(&data, &b, &PenaltyConfig::l1(0.5, 0.0).unwrap(), &tau).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (data, _, tau) = random_instance(4, 2, 3);
        let cfg = PenaltyConfig::l2(0.0, 0.0).unwrap();
        assert!(objective_l2(&data, &CoefficientMatrix::zeros(2, 2), &cfg, &tau).is_err());
        assert!(objective_l2(&data, &CoefficientMatrix::zeros(3, 2), &cfg, &FusionWeights::uniform(3)).is_err());
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_identity_at_zero(z in -100.0f64..100.0, t in 0.0f64..50.0) {
            prop_assert_eq!(soft_threshold(z, 0.0), z);
            prop_assert_eq!(soft_threshold(-z, t), -soft_threshold(z, t));
        }

        #[test]
        fn objectives_agree_without_fusion(seed in 0u64..500, lambda in 0.0f64..5.0) {
            let (data, b, tau) = random_instance(seed, 3, 4);
            let cfg = PenaltyConfig::l2(lambda, 0.0).unwrap();
            let l2 = objective_l2(&data, &b, &cfg, &tau).unwrap();
            let l1 = objective_l1(&data, &b, &cfg, &tau).unwrap();
            prop_assert!(l2 >= 0.0);
            prop_assert_eq!(l2, l1);
        }

        #[test]
        fn l2_objective_permutation_invariant(seed in 0u64..500, shift in 1usize..3) {
            let (data, b, tau) = random_instance(seed, 3, 4);
            let cfg = PenaltyConfig::l2(0.3, 1.7).unwrap();
            let perm: Vec<usize> = (0..3).map(|i| (i + shift) % 3).collect();
            let pdata = GroupedDataset::new(perm.iter().map(|&i| data.group(i).clone()).collect()).unwrap();
            let pb = CoefficientMatrix::new(Array2::from_shape_fn((4, 3), |(j, k)| b[[j, perm[k]]])).unwrap();
            let ptau = FusionWeights::new(Array2::from_shape_fn((3, 3), |(a, c)| tau.get(perm[a], perm[c]))).unwrap();
            let base = objective_l2(&data, &b, &cfg, &tau).unwrap();
            let moved = objective_l2(&pdata, &pb, &cfg, &ptau).unwrap();
            prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
