use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use subgroup_fusion::evaluation::{kfold_cv, GridSpec, Method};
use subgroup_fusion::simulation::select_shared_subset;
use subgroup_fusion::weighting::GroupGaussianModel;
use subgroup_fusion::{FusionWeights, Group, GroupedDataset, SolverOptions};

fn noise_data(seed: u64) -> GroupedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = [60, 50, 70]
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let x = Array2::from_shape_fn((n, 10), |_| rng.sample::<f64, _>(StandardNormal));
            let y = Array1::from_shape_fn(n, |_| 3.0 + rng.sample::<f64, _>(StandardNormal));
            Group::new(format!("g{k}"), x, y)
        })
        .collect();
    GroupedDataset::new(groups).unwrap()
}

/// Share of seeded pure-noise runs in which CV keeps the largest lambda on a 6-point path.
fn largest_lambda_rate(method: Method, runs: u64) -> f64 {
    let opts = SolverOptions::new(5_000, 1e-7).unwrap();
    let hits = (0..runs)
        .filter(|&seed| {
            let data = noise_data(seed);
            let spec = GridSpec {
                n_lambda: 6,
                folds: 5,
                seed,
                ..GridSpec::default()
            };
            let grid = spec.resolve(&data).unwrap();
            let cv = kfold_cv(&data, method, &grid, &FusionWeights::uniform(3), &opts).unwrap();
            cv.lambda == grid.lambda_values[0]
        })
        .count();
    hits as f64 / runs as f64
}

#[test]
fn pure_noise_cv_selects_largest_lambda() {
    for method in [Method::Pooled, Method::Subgroupwise] {
        let rate = largest_lambda_rate(method, 40);
        assert!(rate >= 0.8, "{method}: {rate}");
    }
    // Five gamma values give the fused fit more chances to match noise.
    let rate = largest_lambda_rate(Method::FusedL2, 40);
    assert!(rate >= 0.6, "fused_l2: {rate}");
}

fn random_models(seed: u64, k: usize, p: usize) -> Vec<GroupGaussianModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let mean = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
            let w = Array2::from_shape_fn((p, p), |_| rng.sample::<f64, _>(StandardNormal));
            let mut cov = w.dot(&w.t()) / p as f64;
            cov.diag_mut().mapv_inplace(|v| v + 0.1 + rng.random::<f64>());
            GroupGaussianModel::new(mean, cov).unwrap()
        })
        .collect()
}

#[test]
fn shared_subset_follows_relabeling_outside_optimum() {
    for seed in 0..10 {
        let models = random_models(seed, 7, 3);
        let best = select_shared_subset(&models, 3).unwrap();
        let outside: Vec<usize> = (0..7).filter(|k| !best.contains(k)).collect();
        // Reverse the order of the groups outside the optimum.
        let mut relabeled = models.clone();
        for (a, b) in outside.iter().zip(outside.iter().rev()) {
            relabeled[*a] = models[*b].clone();
        }
        assert_eq!(select_shared_subset(&relabeled, 3).unwrap(), best);
    }
}
