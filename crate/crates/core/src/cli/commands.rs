use std::path::PathBuf;

use super::files::{self, DataTable};
use super::{CliError, RunConfig};
use crate::evaluation::{self, ComparisonSettings, GridSpec, Method};
use crate::model::{PenaltyConfig, SolverOptions};
use crate::simulation::{self, GroupModels, SimulationConfig};
use crate::solver_l1::fit_proximal;
use crate::solver_l2::fit_augmented;
use crate::weighting::{tau_manual, tau_manual_distances, TauScheme, DEFAULT_RIDGE};

const COMMON_KEYS: &[&str] = &["seed", "threads"];
const SIMULATION_KEYS: &[&str] = &[
    "n_groups",
    "n_shared",
    "n_features",
    "n_total",
    "proportions",
    "sparsity",
    "trunc_halfwidth",
    "noise_sd",
];
const SOLVER_KEYS: &[&str] = &["max_iter", "tol"];
const TAU_KEYS: &[&str] = &["tau", "tau_ridge", "tau_file"];
const GRID_KEYS: &[&str] = &[
    "lambdas",
    "n_lambda",
    "lambda_min_ratio",
    "gammas",
    "gamma_factors",
    "folds",
    "stratify",
];

fn allow(cfg: &RunConfig, groups: &[&[&str]]) -> Result<(), CliError> {
    cfg.check_keys(&groups.concat())
}

fn path(cfg: &RunConfig, key: &str, default: &str) -> Result<PathBuf, CliError> {
    cfg.get_or(key, PathBuf::from(default))
}

fn simulation_config(cfg: &RunConfig) -> Result<SimulationConfig, CliError> {
    let d = SimulationConfig::default();
    Ok(SimulationConfig {
        n_groups: cfg.get_or("n_groups", d.n_groups)?,
        n_shared: cfg.get_or("n_shared", d.n_shared)?,
        n_features: cfg.get_or("n_features", d.n_features)?,
        n_total: cfg.get_or("n_total", d.n_total)?,
        group_proportions: cfg.list("proportions")?,
        sparsity: cfg.get_or("sparsity", d.sparsity)?,
        trunc_halfwidth: cfg.get_or("trunc_halfwidth", d.trunc_halfwidth)?,
        noise_sd: cfg.get_or("noise_sd", d.noise_sd)?,
        seed: cfg.get_or("seed", 0)?,
        group_models: GroupModels::Synthetic,
    })
}

fn solver_options(cfg: &RunConfig) -> Result<SolverOptions, CliError> {
    let d = SolverOptions::default();
    Ok(SolverOptions {
        max_iter: cfg.get_or("max_iter", d.max_iter)?,
        tol: cfg.get_or("tol", d.tol)?,
        seed: cfg.get_or("seed", 0)?,
    }
    .validated()?)
}

fn tau_scheme(cfg: &RunConfig, group_ids: &[String]) -> Result<TauScheme, CliError> {
    let name: String = cfg.get_or("tau", "uniform".to_string())?;
    let pairs = || -> Result<_, CliError> {
        let file: PathBuf = cfg.require("tau_file")?;
        files::read_pairs(&file)
    };
    Ok(match name.as_str() {
        "uniform" => TauScheme::Uniform,
        "mean_distance" => TauScheme::MeanDistance,
        "kl" => TauScheme::SymmetrizedKl {
            ridge: cfg.get_or("tau_ridge", DEFAULT_RIDGE)?,
        },
        "manual" => TauScheme::Fixed(tau_manual(group_ids, &pairs()?)?),
        "manual_distance" => TauScheme::Fixed(tau_manual_distances(group_ids, &pairs()?)?),
        other => {
            return Err(CliError::validation(format!(
                "unknown tau scheme `{other}` (expected uniform, mean_distance, kl, manual or manual_distance)"
            )))
        }
    })
}

fn grid_spec(cfg: &RunConfig) -> Result<GridSpec, CliError> {
    let d = GridSpec::default();
    Ok(GridSpec {
        lambda_values: cfg.list("lambdas")?,
        n_lambda: cfg.get_or("n_lambda", d.n_lambda)?,
        lambda_min_ratio: cfg.get_or("lambda_min_ratio", d.lambda_min_ratio)?,
        gamma_values: cfg.list("gammas")?,
        gamma_factors: cfg.list("gamma_factors")?.unwrap_or(d.gamma_factors),
        folds: cfg.get_or("folds", d.folds)?,
        seed: cfg.get_or("seed", 0)?,
        stratify_by_group: cfg.flag("stratify", true)?,
    })
}

fn read_input(cfg: &RunConfig) -> Result<DataTable, CliError> {
    let file: PathBuf = cfg.require("data")?;
    files::read_data(&file)
}

pub(super) fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    allow(cfg, &[COMMON_KEYS, SIMULATION_KEYS, &["data", "truth"]])?;
    let sim = simulation_config(cfg)?;
    let (data_path, truth_path) = (path(cfg, "data", "data.csv")?, path(cfg, "truth", "truth.csv")?);
    let out = simulation::simulate(&sim)?;
    let covariates: Vec<String> = (1..=sim.n_features).map(|j| format!("x{j}")).collect();
    let ids = out.data.group_ids();
    let sizes = out.data.group_sizes();
    files::write_data(
        &data_path,
        &DataTable {
            data: out.data,
            covariates: covariates.clone(),
        },
    )?;
    files::write_coefficients(&truth_path, &out.truth.coefficients, &covariates, &ids)?;
    let shared: Vec<&str> = out.truth.shared.iter().map(|&k| ids[k].as_str()).collect();
    println!("K = {}, K0 = {}, p = {}", sim.n_groups, sim.n_shared, sim.n_features);
    println!("n_k = {sizes:?}");
    println!("shared groups: {}", shared.join(", "));
    Ok(())
}

pub(super) fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    allow(
        cfg,
        &[
            COMMON_KEYS,
            SOLVER_KEYS,
            TAU_KEYS,
            &["data", "method", "lambda", "gamma", "epsilon", "solver", "coefficients", "summary"],
        ],
    )?;
    let method: Method = cfg.get_or("method", Method::FusedL2)?;
    let lambda: f64 = cfg.require("lambda")?;
    let gamma: f64 = cfg.get_or("gamma", 0.0)?;
    let solver: String = cfg.get_or("solver", "cd".to_string())?;
    let epsilon: f64 = cfg.get_or("epsilon", PenaltyConfig::DEFAULT_EPSILON)?;
    let opts = solver_options(cfg)?;
    let (coef_path, summary_path) = (
        path(cfg, "coefficients", "coefficients.csv")?,
        path(cfg, "summary", "summary.txt")?,
    );
    if !matches!(solver.as_str(), "cd" | "augmented") || (solver == "augmented" && method != Method::FusedL2) {
        return Err(CliError::validation(format!(
            "solver `{solver}`: expected cd, or augmented with method fused_l2"
        )));
    }

    let table = read_input(cfg)?;
    let ids = table.data.group_ids();
    let tau = tau_scheme(cfg, &ids)?.weights(&table.data)?;
    let (data, _) = table.data.standardize_by_group()?;
    let fit = match method {
        Method::FusedL2 if solver == "augmented" => {
            fit_augmented(&data, &PenaltyConfig::l2(lambda, gamma)?, &tau, &opts, None)?
        }
        Method::FusedL1 => fit_proximal(
            &data,
            &PenaltyConfig::l1(lambda, gamma)?.with_epsilon(epsilon)?,
            &tau,
            &opts,
            None,
        )?,
        _ => evaluation::fit_method(&data, method, lambda, gamma, &tau, &opts, None)?,
    };
    if !fit.objective().is_finite() {
        return Err(CliError::numerical("objective is not finite"));
    }
    files::write_coefficients(&coef_path, &fit.coefficients, &table.covariates, &ids)?;
    let summary = [
        ("method", method.to_string()),
        ("lambda", lambda.to_string()),
        ("gamma", gamma.to_string()),
        ("objective", fit.objective().to_string()),
        ("iterations", fit.iterations.to_string()),
        ("converged", fit.converged.to_string()),
    ];
    files::write_key_values(&summary_path, &summary)?;
    for (k, v) in &summary {
        println!("{k} = {v}");
    }
    if !fit.converged {
        eprintln!("warning: solver stopped at max_iter = {} before converging", opts.max_iter);
    }
    Ok(())
}

pub(super) fn cv(cfg: &RunConfig) -> Result<(), CliError> {
    allow(cfg, &[COMMON_KEYS, SOLVER_KEYS, TAU_KEYS, GRID_KEYS, &["data", "method", "cv_table"]])?;
    let method: Method = cfg.get_or("method", Method::FusedL2)?;
    let opts = solver_options(cfg)?;
    let spec = grid_spec(cfg)?;
    let table_path = path(cfg, "cv_table", "cv.csv")?;
    let table = read_input(cfg)?;
    let tau = tau_scheme(cfg, &table.data.group_ids())?.weights(&table.data)?;
    let grid = spec.resolve(&table.data)?;
    let result = evaluation::kfold_cv(&table.data, method, &grid, &tau, &opts)?;
    files::write_cv_table(&table_path, &result.table)?;
    println!("lambda = {}", result.lambda);
    println!("gamma = {}", result.gamma);
    if let Some(err) = result.mean_error(result.lambda, result.gamma) {
        println!("mean weighted_rmse = {err}");
    }
    Ok(())
}

pub(super) fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    allow(
        cfg,
        &[
            COMMON_KEYS,
            SIMULATION_KEYS,
            SOLVER_KEYS,
            GRID_KEYS,
            &["tau", "tau_ridge"],
            &[
                "methods",
                "replicates",
                "sweep",
                "sweep_values",
                "test_fraction",
                "report",
                "summary",
                "timings",
                "failures",
            ],
        ],
    )?;
    let sim = simulation_config(cfg)?;
    let d = ComparisonSettings::default();
    let tau_scheme = match cfg.raw("tau") {
        Some("manual" | "manual_distance") => {
            return Err(CliError::validation("compare supports tau = uniform, mean_distance or kl"));
        }
        _ => tau_scheme(cfg, &[])?,
    };
    let settings = ComparisonSettings {
        methods: cfg.list("methods")?.unwrap_or(d.methods),
        grid: grid_spec(cfg)?,
        replicates: cfg.get_or("replicates", d.replicates)?,
        tau_scheme,
        opts: solver_options(cfg)?,
        test_fraction: cfg.get_or("test_fraction", d.test_fraction)?,
    };
    let sweep: String = cfg.get_or("sweep", "none".to_string())?;
    let configs: Vec<(String, SimulationConfig)> = match sweep.as_str() {
        "none" => vec![(String::new(), sim)],
        "n_shared" | "n_total" => {
            let values: Vec<usize> = cfg
                .list("sweep_values")?
                .ok_or_else(|| CliError::validation("sweep needs `sweep_values`"))?;
            values
                .into_iter()
                .map(|v| {
                    let mut c = sim.clone();
                    if sweep == "n_shared" {
                        c.n_shared = v;
                    } else {
                        c.n_total = v;
                    }
                    (format!("{sweep}={v}"), c)
                })
                .collect()
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown sweep `{other}` (expected none, n_shared or n_total)"
            )))
        }
    };
    for (_, c) in &configs {
        c.validate()?;
    }
    let outputs = [
        path(cfg, "report", "report.csv")?,
        path(cfg, "summary", "summary.csv")?,
        path(cfg, "timings", "timings.csv")?,
        path(cfg, "failures", "failures.csv")?,
    ];

    let mut sweeps = Vec::with_capacity(configs.len());
    for (label, c) in configs {
        let report = evaluation::run_comparison(&c, &settings)?;
        sweeps.push((label, report));
    }
    files::write_report(&outputs[0], &sweeps)?;
    files::write_summary_table(&outputs[1], &sweeps)?;
    files::write_timings(&outputs[2], &sweeps)?;
    files::write_failures(&outputs[3], &sweeps)?;

    for (label, report) in &sweeps {
        for s in report.summary() {
            println!(
                "{label:<12} {:<13} {:<13} mean = {:.4} sd = {:.4} (n = {})",
                s.method, s.metric, s.mean, s.sd, s.count
            );
        }
        for f in &report.failures {
            eprintln!(
                "{label} replicate {} {}: {}",
                f.replicate,
                f.method.map(|m| m.to_string()).unwrap_or_default(),
                f.message
            );
        }
    }
    Ok(())
}

pub(super) fn weights(cfg: &RunConfig) -> Result<(), CliError> {
    allow(cfg, &[COMMON_KEYS, TAU_KEYS, &["data", "output"]])?;
    let output = path(cfg, "output", "tau.csv")?;
    let table = read_input(cfg)?;
    let ids = table.data.group_ids();
    let tau = tau_scheme(cfg, &ids)?.weights(&table.data)?;
    files::write_tau(&output, &tau, &ids)?;
    for (a, id) in ids.iter().enumerate() {
        let row: Vec<String> = (0..ids.len()).map(|b| format!("{:.4}", tau.get(a, b))).collect();
        println!("{id}: {}", row.join(" "));
    }
    Ok(())
}
