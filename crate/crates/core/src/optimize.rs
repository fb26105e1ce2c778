//! Graduated optimization by continuation, and the two baselines it is
//! compared against.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::continuation::{mirror_of_deterministic, CovarianceFn, Positioned};
use crate::error::{Error, Result};
use crate::grad::{finite_difference_gradient, score_function_gradient_with_return, Baseline, GradientEstimate};
use crate::mdp::{estimate_return, Mdp, ReturnEstimate};
use crate::policy::{DeterministicAffinePolicy, LogStdGaussianPolicy, ParamVector, ParametricPolicy, ScorePolicy};
use crate::rng::RandomStream;

/// Decreasing multipliers of a base covariance function, one per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `scale0 · decay^i` for `i < stages`.
    Geometric { scale0: f64, decay: f64, stages: usize },
    Explicit { scales: Vec<f64> },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Geometric {
            scale0: 64.0,
            decay: 0.8,
            stages: 20,
        }
    }
}

impl Schedule {
    /// The validated scales: finite, strictly decreasing, positive except
    /// possibly the last, which may be 0.
    pub fn scales(&self) -> Result<Vec<f64>> {
        let scales = match self {
            Schedule::Geometric { scale0, decay, stages } => {
                if !(scale0.is_finite() && *scale0 > 0.0) {
                    return Err(Error::InvalidSchedule(format!("scale0 must be positive, got {scale0}")));
                }
                if !(*decay > 0.0 && *decay < 1.0) {
                    return Err(Error::InvalidSchedule(format!("decay must lie in (0, 1), got {decay}")));
                }
                (0..*stages).map(|i| scale0 * decay.powi(i as i32)).collect()
            }
            Schedule::Explicit { scales } => scales.clone(),
        };
        if scales.is_empty() {
            return Err(Error::InvalidSchedule("at least one stage is required".into()));
        }
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidSchedule(format!("scales must be finite and nonnegative, got {bad}")));
        }
        if let Some(w) = scales.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(format!(
                "scales must strictly decrease, got {} then {}",
                w[0], w[1]
            )));
        }
        Ok(scales)
    }
}

/// Entropy bonus coefficient `initial · decay^k` at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySchedule {
    pub initial: f64,
    pub decay: f64,
}

impl Default for EntropySchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            decay: 0.8,
        }
    }
}

impl EntropySchedule {
    pub fn coef(&self, step: usize) -> f64 {
        self.initial * self.decay.powi(step as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Gradient steps per continuation stage.
    pub steps_per_stage: usize,
    pub stepsize: f64,
    /// Rollouts per gradient estimate.
    pub n_rollouts: usize,
    /// Gradient steps of the baselines, which have no stages.
    pub iterations: usize,
    pub fd_eps: f64,
    pub baseline: Baseline,
    pub entropy: EntropySchedule,
    pub freeze_log_std: bool,
    /// Set by the caller; configuration files carry a single master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            steps_per_stage: 1,
            stepsize: 0.01,
            n_rollouts: 1000,
            iterations: 20,
            fd_eps: 1e-3,
            baseline: Baseline::BatchMean,
            entropy: EntropySchedule::default(),
            freeze_log_std: false,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps_per_stage == 0 {
            return bad("steps_per_stage must be positive".into());
        }
        if !(self.stepsize.is_finite() && self.stepsize >= 0.0) {
            return bad(format!("stepsize must be finite and nonnegative, got {}", self.stepsize));
        }
        if self.n_rollouts < 2 {
            return bad(format!("n_rollouts must be at least 2, got {}", self.n_rollouts));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.fd_eps.is_finite() && self.fd_eps > 0.0) {
            return bad(format!("fd_eps must be positive, got {}", self.fd_eps));
        }
        if !(self.entropy.initial.is_finite() && self.entropy.initial >= 0.0) {
            return bad(format!("entropy.initial must be nonnegative, got {}", self.entropy.initial));
        }
        if !(self.entropy.decay > 0.0 && self.entropy.decay <= 1.0) {
            return bad(format!("entropy.decay must lie in (0, 1], got {}", self.entropy.decay));
        }
        Ok(())
    }
}

/// One gradient step. `theta` is the parameter the gradient and return were
/// evaluated at, before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub stage: usize,
    pub step: usize,
    pub theta: Vec<f64>,
    /// Continuation scale for continuation runs, entropy coefficient for
    /// entropy-regularized runs, 0 for the deterministic baseline.
    pub scale: f64,
    pub return_mean: f64,
    pub return_stderr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub final_theta: Vec<f64>,
}

impl RunRecord {
    fn push(&mut self, stage: usize, step: usize, theta: &ParamVector, scale: f64, ret: &ReturnEstimate, grad: &GradientEstimate) {
        self.rows.push(RunRow {
            stage,
            step,
            theta: theta.iter().cloned().collect(),
            scale,
            return_mean: ret.mean,
            return_stderr: ret.stderr,
            grad_norm: grad.norm(),
        });
    }
}

fn ascend(theta: &ParamVector, grad: &ParamVector, stepsize: f64, stage: usize, step: usize) -> Result<ParamVector> {
    let next = theta + grad * stepsize;
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFiniteTheta { stage, step })
    }
}

/// Finite-difference gradient of the deterministic return, plus the return
/// at `θ` taken as the mean of the two difference points of each rollout.
fn deterministic_gradient<M>(
    mdp: &M,
    policy: &DeterministicAffinePolicy<M::State>,
    theta: &ParamVector,
    cfg: &OptimizerConfig,
    rng: &RandomStream,
) -> Result<(GradientEstimate, ReturnEstimate)>
where
    M: Mdp,
{
    let sides: Mutex<Vec<ReturnEstimate>> = Mutex::new(Vec::new());
    let grad = finite_difference_gradient(
        |t, r| {
            let est = estimate_return(mdp, &policy.with_theta(t.clone()), cfg.n_rollouts, r)?;
            sides.lock().expect("unpoisoned").push(est.clone());
            Ok(est)
        },
        theta,
        cfg.fd_eps,
        rng,
    )?;
    let sides = sides.into_inner().expect("unpoisoned");
    let (up, down) = (&sides[0], &sides[1]);
    let mid = up.samples.iter().zip(&down.samples).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((grad, ReturnEstimate::from_samples(mid)))
}

/// Graduated optimization: for each scale of the schedule, build the
/// Markov mirror of `original` under `scale · base_lam` and take
/// `steps_per_stage` score-function ascent steps on its return, warm-starting
/// from the previous stage.
///
/// A stage with scale 0 has a deterministic mirror with no score, so it
/// falls back to finite differences of the deterministic return.
pub fn optimize_by_continuation<M>(
    mdp: &M,
    original: &DeterministicAffinePolicy<M::State>,
    base_lam: &CovarianceFn,
    schedule: &Schedule,
    cfg: &OptimizerConfig,
) -> Result<RunRecord>
where
    M: Mdp,
    M::State: Positioned + 'static,
{
    cfg.validate()?;
    let scales = schedule.scales()?;
    let master = RandomStream::new(cfg.seed);
    let mut theta = original.theta.clone();
    let mut record = RunRecord::default();
    let mut global = 0u64;
    for (stage, &scale) in scales.iter().enumerate() {
        let lam = base_lam.scaled(scale);
        for step in 0..cfg.steps_per_stage {
            let rng = master.substream(global);
            global += 1;
            let current = original.with_theta(theta.clone());
            let mirror = mirror_of_deterministic(&current, &lam)?;
            let (grad, ret) = if mirror.is_deterministic() {
                deterministic_gradient(mdp, &current, &theta, cfg, &rng)?
            } else {
                score_function_gradient_with_return(mdp, &mirror, cfg.n_rollouts, cfg.baseline, &rng)?
            };
            record.push(stage, step, &theta, scale, &ret, &grad);
            theta = ascend(&theta, &grad.vector, cfg.stepsize, stage, step)?;
        }
    }
    record.final_theta = theta.iter().cloned().collect();
    Ok(record)
}

/// Plain score-function ascent on the return of `policy` for
/// `cfg.iterations` steps.
pub fn score_function_ascent<M, P>(mdp: &M, policy: &P, cfg: &OptimizerConfig) -> Result<RunRecord>
where
    M: Mdp,
    P: ScorePolicy<M::State>,
{
    cfg.validate()?;
    let master = RandomStream::new(cfg.seed);
    let mut theta = policy.theta().clone();
    let mut record = RunRecord::default();
    for step in 0..cfg.iterations {
        let current = policy.with_theta(theta.clone());
        let (grad, ret) =
            score_function_gradient_with_return(mdp, &current, cfg.n_rollouts, cfg.baseline, &master.substream(step as u64))?;
        record.push(0, step, &theta, 0.0, &ret, &grad);
        theta = ascend(&theta, &grad.vector, cfg.stepsize, 0, step)?;
    }
    record.final_theta = theta.iter().cloned().collect();
    Ok(record)
}

/// Score-function ascent on `J(θ, ln σ) + c_k · H(π)`, with `c_k` from
/// `cfg.entropy`.
///
/// The entropy of a diagonal Gaussian is `Σ_j ln σ_j` plus a constant at every
/// state, so the bonus adds `c_k` to each log-std coordinate of the gradient.
/// With `freeze_log_std` those coordinates are not updated.
pub fn entropy_regularized_ascent<M>(
    mdp: &M,
    policy: &LogStdGaussianPolicy<M::State>,
    cfg: &OptimizerConfig,
) -> Result<RunRecord>
where
    M: Mdp,
{
    cfg.validate()?;
    let master = RandomStream::new(cfg.seed);
    let mean_dim = policy.mean.param_dim();
    let mut params = policy.theta().clone();
    let mut record = RunRecord::default();
    for step in 0..cfg.iterations {
        let coef = cfg.entropy.coef(step);
        let current = policy.with_theta(params.clone());
        let (mut grad, ret) =
            score_function_gradient_with_return(mdp, &current, cfg.n_rollouts, cfg.baseline, &master.substream(step as u64))?;
        for j in mean_dim..params.len() {
            if cfg.freeze_log_std {
                grad.vector[j] = 0.0;
                grad.stderr_per_coord[j] = 0.0;
            } else {
                grad.vector[j] += coef;
            }
        }
        record.push(0, step, &params, coef, &ret, &grad);
        params = ascend(&params, &grad.vector, cfg.stepsize, 0, step)?;
    }
    record.final_theta = params.iter().cloned().collect();
    Ok(record)
}

/// Gradient ascent on the deterministic return with finite-difference
/// gradients, for `cfg.iterations` steps.
pub fn deterministic_ascent_baseline<M>(
    mdp: &M,
    policy: &DeterministicAffinePolicy<M::State>,
    cfg: &OptimizerConfig,
) -> Result<RunRecord>
where
    M: Mdp,
{
    cfg.validate()?;
    let master = RandomStream::new(cfg.seed);
    let mut theta = policy.theta.clone();
    let mut record = RunRecord::default();
    for step in 0..cfg.iterations {
        let (grad, ret) = deterministic_gradient(mdp, policy, &theta, cfg, &master.substream(step as u64))?;
        record.push(0, step, &theta, 0.0, &ret, &grad);
        theta = ascend(&theta, &grad.vector, cfg.stepsize, 0, step)?;
    }
    record.final_theta = theta.iter().cloned().collect();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hillcar::HillCarMdp;
    use crate::policy::{k_controller_mean, KController};
    use nalgebra::DVector;

    fn small_cfg() -> OptimizerConfig {
        OptimizerConfig {
            n_rollouts: 64,
            iterations: 4,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn schedule_validation() {
        let scales = Schedule::default().scales().unwrap();
        assert_eq!(scales.len(), 20);
        assert_eq!(scales[0], 64.0);
        assert!(scales.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(Schedule::Explicit { scales: vec![4.0, 1.0, 0.0] }.scales().unwrap(), vec![4.0, 1.0, 0.0]);
        assert_eq!(Schedule::Explicit { scales: vec![0.0] }.scales().unwrap(), vec![0.0]);
        for bad in [vec![], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, -1.0], vec![f64::NAN]] {
            assert!(Schedule::Explicit { scales: bad }.scales().is_err());
        }
        assert!(Schedule::Geometric { scale0: 1.0, decay: 1.0, stages: 3 }.scales().is_err());
        assert!(Schedule::Geometric { scale0: 1.0, decay: 0.5, stages: 0 }.scales().is_err());
    }

    #[test]
    fn warm_start_and_monotone_scales() {
        let mdp = HillCarMdp::default();
        let det = KController::new(1.0, mdp.profile.x_target(), 0.0).deterministic();
        let lam = CovarianceFn::state_radial(1.0, mdp.profile.x_target(), 1e-6, 1).unwrap();
        let cfg = OptimizerConfig {
            steps_per_stage: 2,
            ..small_cfg()
        };
        let schedule = Schedule::Geometric { scale0: 4.0, decay: 0.5, stages: 3 };
        let run = optimize_by_continuation(&mdp, &det, &lam, &schedule, &cfg).unwrap();
        assert_eq!(run.rows.len(), 6);
        for w in run.rows.windows(2) {
            if w[1].stage != w[0].stage {
                assert!(w[1].scale < w[0].scale);
            }
        }
        // Each row's θ is the previous row's θ plus the step it took.
        let stage_starts: Vec<&RunRow> = run.rows.iter().filter(|r| r.step == 0).collect();
        assert_eq!(stage_starts.len(), 3);
        assert_ne!(run.rows[1].theta, run.rows[0].theta);
        let again = optimize_by_continuation(&mdp, &det, &lam, &schedule, &cfg).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn zero_stepsize_keeps_theta() {
        let mdp = HillCarMdp::default();
        let det = KController::new(0.5, mdp.profile.x_target(), 0.0).deterministic();
        let lam = CovarianceFn::state_radial(1.0, mdp.profile.x_target(), 1e-6, 1).unwrap();
        let cfg = OptimizerConfig {
            stepsize: 0.0,
            ..small_cfg()
        };
        let schedule = Schedule::Explicit { scales: vec![2.0, 1.0, 0.0] };
        let run = optimize_by_continuation(&mdp, &det, &lam, &schedule, &cfg).unwrap();
        assert!(run.rows.iter().all(|r| r.theta == vec![0.5]));
        assert_eq!(run.final_theta, vec![0.5]);
        let run = deterministic_ascent_baseline(&mdp, &det, &cfg).unwrap();
        assert!(run.rows.iter().all(|r| r.theta == vec![0.5]));
        assert_eq!(run.rows.len(), cfg.iterations);
    }

    #[test]
    fn non_finite_theta_aborts() {
        let mdp = HillCarMdp::default();
        let det = KController::new(0.5, mdp.profile.x_target(), 0.0).deterministic();
        let cfg = OptimizerConfig {
            stepsize: f64::MAX,
            ..small_cfg()
        };
        assert!(matches!(
            deterministic_ascent_baseline(&mdp, &det, &cfg),
            Err(Error::NonFiniteTheta { stage: 0, step: 0 })
        ));
    }

    #[test]
    fn frozen_entropy_run_matches_plain_ascent() {
        let mdp = HillCarMdp::default();
        let x_target = mdp.profile.x_target();
        let policy = LogStdGaussianPolicy::new(k_controller_mean(x_target), DVector::from_element(1, 0.5), DVector::from_element(1, 0.0));
        let cfg = OptimizerConfig {
            entropy: EntropySchedule { initial: 0.0, decay: 1.0 },
            freeze_log_std: true,
            ..small_cfg()
        };
        let reg = entropy_regularized_ascent(&mdp, &policy, &cfg).unwrap();
        let plain = score_function_ascent(&mdp, &KController::new(0.5, x_target, 1.0).gaussian(), &cfg).unwrap();
        for (a, b) in reg.rows.iter().zip(&plain.rows) {
            assert!((a.theta[0] - b.theta[0]).abs() < 1e-9 * (1.0 + b.theta[0].abs()));
            assert_eq!(a.theta[1], 0.0);
        }
    }

    #[test]
    fn large_entropy_bonus_grows_sigma() {
        let mdp = HillCarMdp::default();
        let x_target = mdp.profile.x_target();
        let policy = LogStdGaussianPolicy::new(k_controller_mean(x_target), DVector::from_element(1, 0.5), DVector::from_element(1, 0.0));
        let cfg = OptimizerConfig {
            entropy: EntropySchedule { initial: 50.0, decay: 1.0 },
            ..small_cfg()
        };
        let run = entropy_regularized_ascent(&mdp, &policy, &cfg).unwrap();
        let log_std: Vec<f64> = run.rows.iter().map(|r| r.theta[1]).chain([run.final_theta[1]]).collect();
        assert!(log_std.windows(2).all(|w| w[1] > w[0]), "{log_std:?}");
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = [
            OptimizerConfig { n_rollouts: 1, ..Default::default() },
            OptimizerConfig { stepsize: -1.0, ..Default::default() },
            OptimizerConfig { fd_eps: 0.0, ..Default::default() },
            OptimizerConfig { steps_per_stage: 0, ..Default::default() },
            OptimizerConfig { entropy: EntropySchedule { initial: 1.0, decay: 1.5 }, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
