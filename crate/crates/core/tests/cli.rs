use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use subgroup_fusion::cli::files::{read_coefficients, read_data};
use subgroup_fusion::objective::objective_l2;
use subgroup_fusion::{FusionWeights, PenaltyConfig};

fn subfusion(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subfusion"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn simulate_small(dir: &Path) {
    let out = subfusion(
        &["simulate", "--n_groups", "3", "--n_shared", "2", "--n_features", "6", "--n_total", "90", "--seed", "5"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).or_else(|| l.strip_prefix(&format!("{key}="))))
        .unwrap_or_else(|| panic!("no `{key}` in summary:\n{text}"))
        .trim()
        .to_string()
}

#[test]
fn fit_round_trip_reproduces_objective() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = subfusion(&["fit", "--data", "data.csv", "--lambda", "3", "--gamma", "2", "--tol", "1e-12"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let table = read_data(&dir.path().join("data.csv")).unwrap();
    let ids = table.data.group_ids();
    let b = read_coefficients(&dir.path().join("coefficients.csv"), &table.covariates, &ids).unwrap();
    let (std, _) = table.data.standardize_by_group().unwrap();
    let f = objective_l2(&std, &b, &PenaltyConfig::l2(3.0, 2.0).unwrap(), &FusionWeights::uniform(3)).unwrap();
    let reported: f64 = summary_value(dir.path(), "objective").parse().unwrap();
    assert!((f - reported).abs() <= 1e-8 * reported.abs().max(1.0), "{f} vs {reported}");
}

#[test]
fn pooled_columns_identical_and_gamma_zero_is_subgroupwise() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let table = read_data(&dir.path().join("data.csv")).unwrap();
    let ids = table.data.group_ids();
    let read = |name: &str| read_coefficients(&dir.path().join(name), &table.covariates, &ids).unwrap();

    let run = |method: &str, gamma: &str, file: &str| {
        let out = subfusion(
            &["fit", "--data", "data.csv", "--method", method, "--lambda", "2", "--gamma", gamma, "--tol", "1e-13", "--coefficients", file],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("pooled", "0", "pooled.csv");
    run("fused_l2", "0", "fused.csv");
    run("subgroupwise", "0", "sub.csv");

    assert!(read("pooled.csv").max_column_discrepancy() == 0.0);
    let (fused, sub) = (read("fused.csv"), read("sub.csv"));
    let diff = (&*fused - &*sub).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
    assert!(diff < 1e-4, "{diff}");
    let (std, _) = table.data.standardize_by_group().unwrap();
    let cfg = PenaltyConfig::l2(2.0, 0.0).unwrap();
    let tau = FusionWeights::uniform(3);
    let (f_fused, f_sub) = (
        objective_l2(&std, &fused, &cfg, &tau).unwrap(),
        objective_l2(&std, &sub, &cfg, &tau).unwrap(),
    );
    assert!((f_fused - f_sub).abs() <= 1e-6 * f_sub, "{f_fused} vs {f_sub}");
}

#[test]
fn simulate_writes_expected_shapes_deterministically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let out = subfusion(&["simulate", "--seed", "3"], dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let data = fs::read_to_string(a.path().join("data.csv")).unwrap();
    let truth = fs::read_to_string(a.path().join("truth.csv")).unwrap();
    assert_eq!(data.lines().count(), 251);
    assert_eq!(data.lines().next().unwrap().split(',').count(), 202);
    assert_eq!(truth.lines().count(), 1801);
    assert_eq!(fs::read(b.path().join("data.csv")).unwrap(), data.as_bytes());
    assert_eq!(fs::read(b.path().join("truth.csv")).unwrap(), truth.as_bytes());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| subfusion(args, dir.path()).status.code().unwrap();
    assert_eq!(code(&["simulate", "--n_groups", "3", "--n_shared", "4"]), 1);
    assert_eq!(code(&["fit", "--data", "missing.csv", "--lambda", "1"]), 2);
    assert_eq!(code(&["frobnicate"]), 1);
    simulate_small(dir.path());
    assert_eq!(code(&["fit", "--data", "data.csv"]), 1);
    assert_eq!(code(&["fit", "--data", "data.csv", "--lambda", "1", "--bogus_key", "2"]), 1);
}

#[test]
fn weights_and_cv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = subfusion(&["weights", "--data", "data.csv", "--tau", "kl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("tau.csv").exists());

    let out = subfusion(&["cv", "--data", "data.csv", "--folds", "3", "--n_lambda", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("cv.csv")).unwrap();
    // 4 lambdas x 5 gammas x 3 folds plus the header.
    assert_eq!(table.lines().count(), 61);
}
