//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs at the full sample sizes, so expect a few minutes.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;

use contin::commands::{cmd_compare, cmd_optimize, cmd_sweep, cmd_verify, compare_rows, basin_landscape, sweep_landscapes};
use contin::config::{ExperimentConfig, Method};
use contin::verify::{Check, Suite};
use policy_continuation::grad::{finite_difference_gradient, score_function_gradient, Baseline};
use policy_continuation::landscape::BasinLabel;
use policy_continuation::mdp::estimate_return;
use policy_continuation::mdp::toy::LinearBandit;
use policy_continuation::policy::{AffineMean, GaussianAffinePolicy, KController, ParametricPolicy, StateCovariance};
use policy_continuation::RandomStream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Outcome {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
    let detail = if failed.is_empty() {
        format!("{} checks within tolerance", checks.len())
    } else {
        let names: Vec<String> = failed
            .iter()
            .map(|c| format!("{} ({:.4} vs {})", c.name, c.statistic, c.tolerance))
            .collect();
        format!("{} of {} checks failed: {}", failed.len(), checks.len(), names.join(", "))
    };
    Outcome {
        pass: failed.is_empty(),
        detail,
    }
}

fn worst_z(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.statistic).fold(0.0, f64::max)
}

fn c1_theorem1(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let checks = Suite::new(cfg)?.theorem1()?;
    let mut out = from_checks(&checks);
    out.detail = format!("{}; largest z {:.3} (tolerance 3, n = 10000 each side)", out.detail, worst_z(&checks));
    Ok(out)
}

fn c2_property3(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    Ok(from_checks(&Suite::new(cfg)?.property3()?))
}

fn c3_property2(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    Ok(from_checks(&Suite::new(cfg)?.property2()?))
}

fn c4_recovery(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let checks = Suite::new(cfg)?.recovery()?;
    let mut out = from_checks(&checks);
    out.detail = format!("{}; worst error {:.2e} (tolerance 1e-10)", out.detail, worst_z(&checks));
    Ok(out)
}

fn c5_theorem2(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let checks = Suite::new(cfg)?.theorem2()?;
    let mut out = from_checks(&checks);
    out.detail = format!("{}; largest z {:.3}", out.detail, worst_z(&checks));
    Ok(out)
}

fn c6_topology(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let landscapes = sweep_landscapes(cfg)?;
    let counts: Vec<(f64, usize)> = landscapes.iter().map(|(s, l)| (*s, l.local_maxima().len())).collect();
    let zero = counts.iter().find(|(s, _)| *s == 0.0).map_or(0, |(_, c)| *c);
    let some_single = counts.iter().any(|(_, c)| *c == 1);
    let monotone = counts.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(Outcome {
        pass: zero >= 2 && some_single && monotone,
        detail: format!("maxima per sigma': {counts:?}"),
    })
}

fn c7_escape(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mdp = cfg.mdp()?;
    let oracle = basin_landscape(cfg, &mdp)?;
    let start = oracle.basin_label(cfg.policy.theta0);
    let rows = compare_rows(cfg)?;
    let count = |m: Method, label: BasinLabel| rows.iter().filter(|r| r.method == m && r.basin_label == label).count();
    let cont = count(Method::Continuation, BasinLabel::Global);
    let det = count(Method::Deterministic, BasinLabel::Local);
    let n = cfg.compare.seeds.len();
    Ok(Outcome {
        pass: start == BasinLabel::Local && cont >= 18 && det >= 18 && n == 20,
        detail: format!(
            "theta0 = {} starts in the {} basin; continuation global {cont}/{n} (need 18), deterministic local {det}/{n} (need 18)",
            cfg.policy.theta0,
            start.as_str()
        ),
    })
}

fn c8_gradients(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mdp = cfg.mdp()?;
    let x_target = mdp.profile.x_target();
    let n = 10_000;
    let master = RandomStream::new(cfg.seed).substream(800);
    let mut worst: f64 = 0.0;
    for (i, theta) in [-3.0, -1.5, -0.3, 0.0, 1.0].into_iter().enumerate() {
        let rng = master.substream(i as u64);
        let mirror = KController::new(theta, x_target, 1.0).gaussian();
        let score = score_function_gradient(&mdp, &mirror, n, Baseline::BatchMean, &rng.substream(0))?;
        let fd = finite_difference_gradient(
            |t, r| estimate_return(&mdp, &mirror.with_theta(t.clone()), n, r),
            &mirror.theta,
            cfg.optimizer.fd_eps,
            &rng.substream(1),
        )?;
        let se = score.stderr_per_coord[0].hypot(fd.stderr_per_coord[0]);
        worst = worst.max((score.vector[0] - fd.vector[0]).abs() / se);
    }
    let bandit = LinearBandit {
        weights: DVector::from_element(1, 1.0),
    };
    let policy = GaussianAffinePolicy::new(
        AffineMean::new(1, 1, |_: &f64| nalgebra::DMatrix::from_element(1, 1, 1.0)),
        StateCovariance::Constant(nalgebra::DMatrix::from_element(1, 1, 1.0)),
        DVector::from_element(1, 0.3),
    );
    let g = score_function_gradient(&bandit, &policy, n, Baseline::BatchMean, &master.substream(99))?;
    let bandit_z = (g.vector[0] - 1.0).abs() / g.stderr_per_coord[0];
    Ok(Outcome {
        pass: worst <= 3.0 && bandit_z <= 3.0,
        detail: format!(
            "hill-car score vs finite differences: largest z {worst:.3}; one-step J = theta: estimate {:.4} ± {:.4} (z {bandit_z:.3})",
            g.vector[0], g.stderr_per_coord[0]
        ),
    })
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 42;
    cfg.out_dir = out.to_path_buf();
    cfg.sweep.theta_step = 0.5;
    cfg.sweep.n_rollouts = 20;
    cfg.basin.pitch = 0.1;
    cfg.basin.n_rollouts = 20;
    cfg.verify.n_rollouts = 50;
    cfg.verify.n_mixture = 200;
    cfg.verify.recovery_instances = 10;
    cfg.optimizer.n_rollouts = 20;
    cfg.optimizer.iterations = 5;
    cfg.compare.seeds = vec![0, 1];
    cfg.compare.methods = vec![Method::Continuation, Method::EntropyReg, Method::Deterministic];
    cfg
}

fn run_all_commands(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    cmd_sweep(cfg)?;
    cmd_verify(cfg)?;
    for m in [Method::Continuation, Method::EntropyReg, Method::Deterministic] {
        cmd_optimize(cfg, m)?;
    }
    cmd_compare(cfg)?;
    Ok(())
}

fn c9_determinism() -> anyhow::Result<Outcome> {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    run_all_commands(&small_config(a.path()))?;
    run_all_commands(&small_config(b.path()))?;
    let mut names: Vec<String> = fs::read_dir(a.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .collect();
    Ok(Outcome {
        pass: differing.is_empty() && names.len() == 10,
        detail: format!("{} files compared, differing: {differing:?}", names.len()),
    })
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let criteria: Vec<(&str, Box<dyn Fn() -> anyhow::Result<Outcome>>)> = vec![
        ("1 theorem-1 return equality", Box::new(|| c1_theorem1(&cfg))),
        ("2 deterministic mirror moments", Box::new(|| c2_property3(&cfg))),
        ("3 gaussian mirror exact case", Box::new(|| c3_property2(&cfg))),
        ("4 continuation recovery round trip", Box::new(|| c4_recovery(&cfg))),
        ("5 composition", Box::new(|| c5_theorem2(&cfg))),
        ("6 landscape topology", Box::new(|| c6_topology(&cfg))),
        ("7 escape from the local basin", Box::new(|| c7_escape(&cfg))),
        ("8 gradient correctness", Box::new(|| c8_gradients(&cfg))),
        ("9 determinism", Box::new(c9_determinism)),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e:#}"),
        });
        if !outcome.pass {
            failures += 1;
        }
        println!(
            "criterion {name}: {} [{:.1}s] {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
