//! Browser bindings for the hill-car demo. Each export takes plain numbers
//! and returns a JSON string, so the page needs no generated glue types.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use policy_continuation::continuation::{
    action_moments, mirror_covariance, sample_mixture_actions, CovarianceFn, MixtureMirror, DEFAULT_RADIAL_EPS,
};
use policy_continuation::hillcar::{CarState, HillCarMdp};
use policy_continuation::landscape::{k_controller_landscape, theta_grid};
use policy_continuation::mdp::History;
use policy_continuation::optimize::{deterministic_ascent_baseline, optimize_by_continuation, OptimizerConfig, Schedule};
use policy_continuation::policy::KController;
use policy_continuation::RandomStream;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub sigma_prime: f64,
    pub thetas: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// θ of each strict local maximum of the estimated curve.
    pub maxima: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Landscapes {
    pub x_target: f64,
    pub curves: Vec<Curve>,
}

pub fn landscapes(theta_min: f64, theta_max: f64, step: f64, sigma_primes: &[f64], n: usize, seed: u64) -> Res<Landscapes> {
    let mdp = HillCarMdp::default();
    let grid = theta_grid(theta_min, theta_max, step).map_err(err)?;
    let rng = RandomStream::new(seed);
    let curves = sigma_primes
        .iter()
        .map(|&sp| {
            let l = k_controller_landscape(&mdp, &grid, sp, n, &rng).map_err(err)?;
            Ok(Curve {
                sigma_prime: sp,
                maxima: l.local_maxima().into_iter().map(|i| l.thetas[i]).collect(),
                thetas: l.thetas,
                means: l.means,
                stderrs: l.stderrs,
            })
        })
        .collect::<Res<_>>()?;
    Ok(Landscapes {
        x_target: mdp.profile.x_target(),
        curves,
    })
}

#[derive(Debug, Serialize)]
pub struct MirrorVariance {
    pub xs: Vec<f64>,
    /// `φ(x)ᵀ Λ(x) φ(x)` from the closed form.
    pub closed_form: Vec<f64>,
    /// Sample variance of actions drawn by perturbing θ and acting greedily.
    pub sampled: Vec<f64>,
}

/// Action variance of the deterministic K-controller's mirror under the
/// state-radial continuation, across positions at zero velocity.
pub fn mirror_variance(theta: f64, sigma_ref: f64, x_min: f64, x_max: f64, points: usize, m: usize, seed: u64) -> Res<MirrorVariance> {
    if points < 2 || m < 2 || !(x_max > x_min) {
        return Err("need points >= 2, draws >= 2 and x_max > x_min".into());
    }
    let x_target = HillCarMdp::default().profile.x_target();
    let lam = CovarianceFn::state_radial(sigma_ref, x_target, DEFAULT_RADIAL_EPS, 1).map_err(err)?;
    let k = KController::new(theta, x_target, 0.0);
    let mean = k.affine_mean();
    let mirror = MixtureMirror::new(k.deterministic(), DVector::from_element(1, theta), lam.clone()).map_err(err)?;
    let rng = RandomStream::new(seed);
    let mut out = MirrorVariance {
        xs: Vec::with_capacity(points),
        closed_form: Vec::with_capacity(points),
        sampled: Vec::with_capacity(points),
    };
    for i in 0..points {
        let x = x_min + (x_max - x_min) * i as f64 / (points - 1) as f64;
        let state = CarState { x, v: 0.0 };
        let phi: DMatrix<f64> = mean.jacobian(&state);
        let cov = mirror_covariance(&phi, &lam.eval_state(&state).map_err(err)?);
        let actions = sample_mixture_actions(&mirror, &History::new(state), m, &rng.substream(i as u64)).map_err(err)?;
        let (_, sample_cov) = action_moments(&actions);
        out.xs.push(x);
        out.closed_form.push(cov[(0, 0)]);
        out.sampled.push(sample_cov[(0, 0)]);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct TracePoint {
    pub theta: f64,
    pub scale: f64,
    pub return_mean: f64,
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub method: String,
    pub points: Vec<TracePoint>,
    pub final_theta: f64,
}

/// One optimization run from `theta0`. `method` is `continuation` or
/// `deterministic`; both take `stages` steps.
pub fn optimization_trace(method: &str, theta0: f64, stages: usize, n: usize, seed: u64) -> Res<Trace> {
    let mdp = HillCarMdp::default();
    let x_target = mdp.profile.x_target();
    let det = KController::new(theta0, x_target, 0.0).deterministic();
    let cfg = OptimizerConfig {
        n_rollouts: n,
        iterations: stages,
        seed,
        ..OptimizerConfig::default()
    };
    let run = match method {
        "continuation" => {
            let lam = CovarianceFn::state_radial(1.0, x_target, DEFAULT_RADIAL_EPS, 1).map_err(err)?;
            let schedule = Schedule::Geometric {
                scale0: 64.0,
                decay: 0.8,
                stages,
            };
            optimize_by_continuation(&mdp, &det, &lam, &schedule, &cfg)
        }
        "deterministic" => deterministic_ascent_baseline(&mdp, &det, &cfg),
        other => return Err(format!("unknown method {other:?}")),
    }
    .map_err(err)?;
    Ok(Trace {
        method: method.to_string(),
        points: run
            .rows
            .iter()
            .map(|r| TracePoint {
                theta: r.theta[0],
                scale: r.scale,
                return_mean: r.return_mean,
            })
            .collect(),
        final_theta: run.final_theta[0],
    })
}

fn to_js<T: Serialize>(r: Res<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = landscapes)]
pub fn landscapes_js(theta_min: f64, theta_max: f64, step: f64, sigma_primes: Vec<f64>, n: usize, seed: u64) -> Result<String, JsError> {
    to_js(landscapes(theta_min, theta_max, step, &sigma_primes, n, seed))
}

#[wasm_bindgen(js_name = mirrorVariance)]
pub fn mirror_variance_js(theta: f64, sigma_ref: f64, x_min: f64, x_max: f64, points: usize, draws: usize, seed: u64) -> Result<String, JsError> {
    to_js(mirror_variance(theta, sigma_ref, x_min, x_max, points, draws, seed))
}

#[wasm_bindgen(js_name = optimizationTrace)]
pub fn optimization_trace_js(method: &str, theta0: f64, stages: usize, n: usize, seed: u64) -> Result<String, JsError> {
    to_js(optimization_trace(method, theta0, stages, n, seed))
}
