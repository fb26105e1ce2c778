//! The four subcommands, as library functions returning what they wrote.

use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use policy_continuation::hillcar::HillCarMdp;
use policy_continuation::landscape::{k_controller_landscape, theta_grid, BasinLabel, Landscape};
use policy_continuation::mdp::{estimate_return, ReturnEstimate};
use policy_continuation::optimize::{
    deterministic_ascent_baseline, entropy_regularized_ascent, optimize_by_continuation, RunRecord,
};
use policy_continuation::policy::{k_controller_mean, KController, LogStdGaussianPolicy, ParametricPolicy};
use policy_continuation::RandomStream;

use crate::config::{ExperimentConfig, Method};
use crate::output::{num, write_csv, write_json};
use crate::verify::{run_verify, VerifyReport};

// Branches of the master stream used by the commands.
pub const SWEEP_STREAM: u64 = 100;
pub const BASIN_STREAM: u64 = 101;
pub const FINAL_RETURN_STREAM: u64 = 102;

pub const SWEEP_COLUMNS: [&str; 5] = ["theta", "sigma_prime", "return_mean", "return_stderr", "n"];
pub const COMPARE_COLUMNS: [&str; 5] = ["method", "seed", "final_theta", "final_return", "basin_label"];
pub const RATE_COLUMNS: [&str; 4] = ["method", "n_seeds", "n_global", "success_rate"];

/// One landscape per `σ′` of the sweep, all on the same stream.
pub fn sweep_landscapes(cfg: &ExperimentConfig) -> anyhow::Result<Vec<(f64, Landscape)>> {
    let mdp = cfg.mdp()?;
    let s = &cfg.sweep;
    let grid = theta_grid(s.theta_min, s.theta_max, s.theta_step)?;
    let rng = RandomStream::new(cfg.seed).substream(SWEEP_STREAM);
    s.sigma_primes
        .iter()
        .map(|&sp| Ok((sp, k_controller_landscape(&mdp, &grid, sp, s.n_rollouts, &rng)?)))
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let landscapes = sweep_landscapes(cfg)?;
    let mut rows = Vec::new();
    for (sp, l) in &landscapes {
        for i in 0..l.thetas.len() {
            rows.push(vec![num(l.thetas[i]), num(*sp), num(l.means[i]), num(l.stderrs[i]), l.n.to_string()]);
        }
    }
    write_csv(&cfg.out_dir, "sweep.csv", cfg, &SWEEP_COLUMNS, &rows)
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> anyhow::Result<(VerifyReport, PathBuf)> {
    let report = run_verify(cfg)?;
    let path = write_json(&cfg.out_dir, "verify.json", &report)?;
    Ok((report, path))
}

/// The deterministic K-controller landscape on the basin grid.
pub fn basin_landscape(cfg: &ExperimentConfig, mdp: &HillCarMdp) -> anyhow::Result<Landscape> {
    let b = &cfg.basin;
    let grid = theta_grid(b.theta_min, b.theta_max, b.pitch)?;
    let rng = RandomStream::new(cfg.seed).substream(BASIN_STREAM);
    Ok(k_controller_landscape(mdp, &grid, 0.0, b.n_rollouts, &rng)?)
}

/// Runs one optimizer from the configured initial policy.
pub fn run_method(cfg: &ExperimentConfig, mdp: &HillCarMdp, method: Method, seed: u64) -> anyhow::Result<RunRecord> {
    let x_target = mdp.profile.x_target();
    let opt = cfg.optimizer_for(seed);
    let det = KController::new(cfg.policy.theta0, x_target, 0.0).deterministic();
    Ok(match method {
        Method::Continuation => {
            let lam = cfg.continuation.build(x_target)?;
            optimize_by_continuation(mdp, &det, &lam, &cfg.schedule, &opt)?
        }
        Method::Deterministic => deterministic_ascent_baseline(mdp, &det, &opt)?,
        Method::EntropyReg => {
            let policy = LogStdGaussianPolicy::new(
                k_controller_mean(x_target),
                DVector::from_element(1, cfg.policy.theta0),
                DVector::from_element(1, cfg.policy.log_std0),
            );
            entropy_regularized_ascent(mdp, &policy, &opt)?
        }
    })
}

/// Return of the policy a run ends with: the deterministic controller for
/// continuation and the deterministic baseline, the learned Gaussian for the
/// entropy-regularized run.
pub fn final_return(cfg: &ExperimentConfig, mdp: &HillCarMdp, method: Method, run: &RunRecord, seed: u64) -> anyhow::Result<ReturnEstimate> {
    let x_target = mdp.profile.x_target();
    let rng = RandomStream::new(seed).substream(FINAL_RETURN_STREAM);
    let n = cfg.optimizer.n_rollouts;
    let theta = DVector::from_vec(run.final_theta.clone());
    Ok(match method {
        Method::EntropyReg => {
            let policy = LogStdGaussianPolicy::new(k_controller_mean(x_target), DVector::zeros(1), DVector::zeros(1)).with_theta(theta);
            estimate_return(mdp, &policy, n, &rng)?
        }
        _ => estimate_return(mdp, &KController::new(theta[0], x_target, 0.0).deterministic(), n, &rng)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSummary {
    pub seed: u64,
    pub config_sha256: String,
    pub method: Method,
    pub theta0: f64,
    pub final_theta: Vec<f64>,
    pub final_return: ReturnEstimate,
    /// Return estimate recorded at the last step, under that step's policy.
    pub last_step_return: f64,
    pub basin_label: BasinLabel,
    pub steps: usize,
}

pub fn run_columns(dim: usize) -> Vec<String> {
    let mut cols = vec!["stage".to_string(), "step".to_string()];
    cols.extend((0..dim).map(|i| format!("theta_{i}")));
    cols.extend(["scale", "return_mean", "return_stderr", "grad_norm"].map(String::from));
    cols
}

pub fn cmd_optimize(cfg: &ExperimentConfig, method: Method) -> anyhow::Result<(OptimizeSummary, Vec<PathBuf>)> {
    let mdp = cfg.mdp()?;
    let run = run_method(cfg, &mdp, method, cfg.seed)?;
    let landscape = basin_landscape(cfg, &mdp)?;
    let dim = run.final_theta.len();
    let rows: Vec<Vec<String>> = run
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.stage.to_string(), r.step.to_string()];
            row.extend(r.theta.iter().map(|t| num(*t)));
            row.extend([num(r.scale), num(r.return_mean), num(r.return_stderr), num(r.grad_norm)]);
            row
        })
        .collect();
    let columns = run_columns(dim);
    let header: Vec<&str> = columns.iter().map(String::as_str).collect();
    let name = method.as_str();
    let csv = write_csv(&cfg.out_dir, &format!("optimize_{name}.csv"), cfg, &header, &rows)?;
    let summary = OptimizeSummary {
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        method,
        theta0: cfg.policy.theta0,
        final_theta: run.final_theta.clone(),
        final_return: final_return(cfg, &mdp, method, &run, cfg.seed)?,
        last_step_return: run.rows.last().map_or(f64::NAN, |r| r.return_mean),
        basin_label: landscape.basin_label(run.final_theta[0]),
        steps: run.rows.len(),
    };
    let json = write_json(&cfg.out_dir, &format!("optimize_{name}_summary.json"), &summary)?;
    Ok((summary, vec![csv, json]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub seed: u64,
    pub final_theta: f64,
    pub final_return: f64,
    pub basin_label: BasinLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRate {
    pub method: Method,
    pub n_seeds: usize,
    pub n_global: usize,
    pub rate: f64,
}

/// Fraction of rows per method that end in the global basin, in the order
/// methods first appear.
pub fn success_rates(rows: &[CompareRow]) -> Vec<SuccessRate> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let flags: Vec<bool> = rows.iter().filter(|r| r.method == m).map(|r| r.basin_label == BasinLabel::Global).collect();
            let n_global = flags.iter().filter(|f| **f).count();
            SuccessRate {
                method: m,
                n_seeds: flags.len(),
                n_global,
                rate: n_global as f64 / flags.len() as f64,
            }
        })
        .collect()
}

pub fn compare_rows(cfg: &ExperimentConfig) -> anyhow::Result<Vec<CompareRow>> {
    let mdp = cfg.mdp()?;
    let landscape = basin_landscape(cfg, &mdp)?;
    let mut rows = Vec::new();
    for &method in &cfg.compare.methods {
        for &seed in &cfg.compare.seeds {
            let run = run_method(cfg, &mdp, method, seed)?;
            let ret = final_return(cfg, &mdp, method, &run, seed)?;
            rows.push(CompareRow {
                method,
                seed,
                final_theta: run.final_theta[0],
                final_return: ret.mean,
                basin_label: landscape.basin_label(run.final_theta[0]),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> anyhow::Result<(Vec<CompareRow>, Vec<SuccessRate>, Vec<PathBuf>)> {
    let rows = compare_rows(cfg)?;
    let rates = success_rates(&rows);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.as_str().to_string(),
                r.seed.to_string(),
                num(r.final_theta),
                num(r.final_return),
                r.basin_label.as_str().to_string(),
            ]
        })
        .collect();
    let rate_table: Vec<Vec<String>> = rates
        .iter()
        .map(|r| vec![r.method.as_str().to_string(), r.n_seeds.to_string(), r.n_global.to_string(), num(r.rate)])
        .collect();
    let a = write_csv(&cfg.out_dir, "compare.csv", cfg, &COMPARE_COLUMNS, &table)?;
    let b = write_csv(&cfg.out_dir, "compare_rates.csv", cfg, &RATE_COLUMNS, &rate_table)?;
    Ok((rows, rates, vec![a, b]))
}
