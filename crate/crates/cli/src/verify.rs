//! The identity suite run by `contin verify`.
//!
//! Every check reduces to one number compared against one tolerance, so the
//! report can be read without knowing the statistics behind each entry.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use policy_continuation::continuation::{
    compose_continuations, estimate_continuation, mirror_of_deterministic,
    mirror_of_deterministic_history, mirror_of_gaussian, recover_continuation_cov,
    recover_continuation_cov_from_gaussian, sample_mixture_actions, CovarianceFn, MixtureMirror,
};
use policy_continuation::hillcar::{CarState, HillCarMdp};
use policy_continuation::mdp::{estimate_return, History};
use policy_continuation::policy::{
    AffineMean, DeterministicAffinePolicy, GaussianAffinePolicy, KController, ParametricPolicy, StateCovariance,
};
use policy_continuation::stats::{self, ks_one_sample, ks_two_sample, normal_cdf};
use policy_continuation::{RandomStream, Result};

use crate::config::{ExperimentConfig, VerifyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Passes when `statistic <= tolerance`.
    AtMost,
    /// Passes when `statistic >= tolerance`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    pub rule: Rule,
    pub pass: bool,
    /// Rollouts or draws on each side.
    pub n_samples: usize,
    /// Key of the random stream the check consumed.
    pub seed: u64,
}

impl Check {
    fn new(name: String, statistic: f64, tolerance: f64, rule: Rule, n_samples: usize, seed: u64) -> Self {
        let pass = match rule {
            Rule::AtMost => statistic <= tolerance,
            Rule::AtLeast => statistic >= tolerance,
        };
        Self {
            name,
            statistic,
            tolerance,
            rule,
            pass,
            n_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub config_sha256: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

// Stream families; each check family draws from its own branch of the master seed.
const THEOREM1: u64 = 1;
const PROPERTY1: u64 = 2;
const PROPERTY2: u64 = 3;
const PROPERTY3: u64 = 4;
const PROPERTY4: u64 = 5;
const RECOVERY: u64 = 6;
const THEOREM2: u64 = 7;

/// Shared inputs of the checks.
pub struct Suite<'a> {
    pub mdp: HillCarMdp,
    pub cfg: &'a VerifyConfig,
    pub master: RandomStream,
    x_target: f64,
}

fn car(x: f64) -> CarState {
    CarState { x, v: 0.0 }
}

/// `|diff| / se`; with an exact comparison any nonzero difference is infinite.
fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

impl<'a> Suite<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> std::result::Result<Self, crate::config::ConfigError> {
        let mdp = cfg.mdp()?;
        let x_target = mdp.profile.x_target();
        Ok(Self {
            mdp,
            cfg: &cfg.verify,
            master: RandomStream::new(cfg.seed),
            x_target,
        })
    }

    fn stream(&self, family: u64, index: u64) -> RandomStream {
        self.master.substream(family).substream(index)
    }

    fn deterministic(&self, theta: f64) -> DeterministicAffinePolicy<CarState> {
        KController::new(theta, self.x_target, 0.0).deterministic()
    }

    pub fn constant_lambda(&self) -> Result<CovarianceFn> {
        CovarianceFn::isotropic(self.cfg.constant_lambda, 1)
    }

    pub fn radial_lambda(&self) -> Result<CovarianceFn> {
        CovarianceFn::state_radial(self.cfg.radial_sigma_ref, self.x_target, policy_continuation::continuation::DEFAULT_RADIAL_EPS, 1)
    }

    pub fn decay_lambda(&self) -> Result<CovarianceFn> {
        CovarianceFn::time_decay(DMatrix::from_element(1, 1, self.cfg.decay_lambda), self.cfg.decay_beta)
    }

    fn return_check<P>(&self, name: String, continuation_side: (&CovarianceFn, f64), mirror: &P, rng: &RandomStream) -> Result<Check>
    where
        P: policy_continuation::policy::Policy<CarState>,
    {
        let n = self.cfg.n_rollouts;
        let (lam, theta) = continuation_side;
        let det = self.deterministic(theta);
        let cont = estimate_continuation(&self.mdp, &det, &det.theta, lam, n, &rng.substream(0))?;
        let ret = estimate_return(&self.mdp, mirror, n, &rng.substream(1))?;
        let z = z_score(cont.mean - ret.mean, cont.combined_stderr(&ret));
        Ok(Check::new(name, z, self.cfg.return_tolerance_se, Rule::AtMost, n, rng.key()))
    }

    /// Continuation of the deterministic K-controller against the return of
    /// its closed-form mirror, for three covariance functions and every θ.
    pub fn theorem1(&self) -> Result<Vec<Check>> {
        let mult = self.cfg.mirror_lambda_multiplier;
        let variants = [
            ("constant", self.constant_lambda()?),
            ("state_radial", self.radial_lambda()?),
            ("time_decay", self.decay_lambda()?),
        ];
        let mut checks = Vec::new();
        let mut index = 0;
        for (label, lam) in &variants {
            for &theta in &self.cfg.thetas {
                let rng = self.stream(THEOREM1, index);
                index += 1;
                let det = self.deterministic(theta);
                let name = format!("theorem1/{label}/theta={theta}");
                let mirror_lam = lam.scaled(mult);
                let check = if lam.is_markov() {
                    let mirror = mirror_of_deterministic(&det, &mirror_lam)?;
                    self.return_check(name, (lam, theta), &mirror, &rng)?
                } else {
                    let mirror = mirror_of_deterministic_history(&det, &mirror_lam)?;
                    self.return_check(name, (lam, theta), &mirror, &rng)?
                };
                checks.push(check);
            }
        }
        Ok(checks)
    }

    /// Mixture-mirror actions at two histories ending in the same state have
    /// the same distribution under a state-only covariance.
    pub fn property1(&self) -> Result<Vec<Check>> {
        let det = self.deterministic(1.0);
        let mirror = MixtureMirror::new(det.clone(), det.theta.clone(), self.radial_lambda()?)?;
        let short = History::new(car(-1.0));
        let long = History::from_parts(
            vec![car(3.0), car(0.5), car(-1.0)],
            vec![DVector::from_element(1, 4.0), DVector::from_element(1, -2.0)],
        )?;
        let rng = self.stream(PROPERTY1, 0);
        let m = self.cfg.n_mixture;
        let a: Vec<f64> = sample_mixture_actions(&mirror, &short, m, &rng.substream(0))?.iter().map(|a| a[0]).collect();
        let b: Vec<f64> = sample_mixture_actions(&mirror, &long, m, &rng.substream(1))?.iter().map(|a| a[0]).collect();
        let ks = ks_two_sample(&a, &b);
        Ok(vec![Check::new(
            "property1/markov/ks_p_value".into(),
            ks.p_value,
            self.cfg.ks_alpha,
            Rule::AtLeast,
            m,
            rng.key(),
        )])
    }

    /// Mean, variance and KS checks of mixture draws against `N(mean, var)`.
    fn moment_checks(&self, prefix: &str, draws: &[f64], mean: f64, var: f64, seed: u64) -> Vec<Check> {
        let m = draws.len();
        let tol = self.cfg.moment_tolerance_se;
        let mean_z = z_score(stats::mean(draws) - mean, stats::standard_error(draws));
        let var_z = z_score(stats::sample_variance(draws) - var, stats::variance_standard_error(draws));
        let std = var.sqrt();
        let ks = ks_one_sample(draws, |x| normal_cdf(x, mean, std));
        vec![
            Check::new(format!("{prefix}/mean_z"), mean_z, tol, Rule::AtMost, m, seed),
            Check::new(format!("{prefix}/variance_z"), var_z, tol, Rule::AtMost, m, seed),
            Check::new(format!("{prefix}/ks_p_value"), ks.p_value, self.cfg.ks_alpha, Rule::AtLeast, m, seed),
        ]
    }

    fn mixture_draws<P>(&self, mirror: &MixtureMirror<P>, history: &History<CarState>, rng: &RandomStream) -> Result<Vec<f64>>
    where
        P: ParametricPolicy<CarState>,
    {
        Ok(sample_mixture_actions(mirror, history, self.cfg.n_mixture, rng)?
            .iter()
            .map(|a| a[0])
            .collect())
    }

    /// Deterministic original, constant Λ: mixture draws against
    /// `N(μ_θ(s), φᵀΛφ)` at each fixed state.
    pub fn property3(&self) -> Result<Vec<Check>> {
        let det = self.deterministic(1.0);
        let lam = self.constant_lambda()?;
        let closed = mirror_of_deterministic(&det, &lam)?;
        let mixture = MixtureMirror::new(det.clone(), det.theta.clone(), lam)?;
        let mut checks = Vec::new();
        for (i, &x) in self.cfg.states.iter().enumerate() {
            let rng = self.stream(PROPERTY3, i as u64);
            let s = car(x);
            let draws = self.mixture_draws(&mixture, &History::new(s), &rng)?;
            let mean = closed.mean.mean(&closed.theta, &s)[0];
            let var = closed.covariance_at(&s)[(0, 0)];
            checks.extend(self.moment_checks(&format!("property3/x={x}"), &draws, mean, var, rng.key()));
        }
        Ok(checks)
    }

    /// Gaussian original with θ-independent covariance: the constructor adds
    /// covariances exactly, and mixture draws match the sum.
    pub fn property2(&self) -> Result<Vec<Check>> {
        let sigma = self.cfg.gaussian_sigma;
        let original = KController::new(1.0, self.x_target, sigma).gaussian();
        let lam = self.constant_lambda()?;
        let closed = mirror_of_gaussian(&original, &lam)?;
        let mut worst: f64 = 0.0;
        for &x in &self.cfg.states {
            let phi = x - self.x_target;
            let expected = sigma * sigma + self.cfg.constant_lambda * phi * phi;
            let got = closed.covariance_at(&car(x))[(0, 0)];
            worst = worst.max((got - expected).abs() / expected);
        }
        let mut checks = vec![Check::new(
            "property2/constructor_relative_error".into(),
            worst,
            4.0 * f64::EPSILON,
            Rule::AtMost,
            self.cfg.states.len(),
            0,
        )];
        let mixture = MixtureMirror::new(original.clone(), original.theta.clone(), lam)?;
        for (i, &x) in self.cfg.states.iter().enumerate() {
            let rng = self.stream(PROPERTY2, i as u64);
            let s = car(x);
            let draws = self.mixture_draws(&mixture, &History::new(s), &rng)?;
            let mean = closed.mean.mean(&closed.theta, &s)[0];
            let var = closed.covariance_at(&s)[(0, 0)];
            checks.extend(self.moment_checks(&format!("property2/x={x}"), &draws, mean, var, rng.key()));
        }
        Ok(checks)
    }

    /// History-dependent Λ: mixture draws after ten steps at a fixed state
    /// against `N(μ_θ(s), φᵀ Λ(h) φ)`.
    pub fn property4(&self) -> Result<Vec<Check>> {
        let det = self.deterministic(1.0);
        let lam = self.decay_lambda()?;
        let closed = mirror_of_deterministic_history(&det, &lam)?;
        let mixture = MixtureMirror::new(det.clone(), det.theta.clone(), lam)?;
        let mut checks = Vec::new();
        for (i, &x) in self.cfg.states.iter().enumerate() {
            let rng = self.stream(PROPERTY4, i as u64);
            let s = car(x);
            let mut h = History::new(s);
            for _ in 0..10 {
                h.push(DVector::zeros(1), s);
            }
            let draws = self.mixture_draws(&mixture, &h, &rng)?;
            let mean = closed.mean.mean(&closed.theta, &s)[0];
            let var = closed.covariance_at(&h)[(0, 0)];
            checks.extend(self.moment_checks(&format!("property4/t=10/x={x}"), &draws, mean, var, rng.key()));
        }
        Ok(checks)
    }

    /// Random full-rank instances with `d_A ≤ d_Θ ≤ recovery_max_dim`:
    /// recovering Λ from a mirror and mirroring it back reproduces `Σ′`.
    pub fn recovery(&self) -> Result<Vec<Check>> {
        let n = self.cfg.recovery_instances;
        let max_dim = self.cfg.recovery_max_dim;
        let family = self.master.substream(RECOVERY);
        let (mut worst5, mut worst6) = (0.0f64, 0.0f64);
        for i in 0..n {
            let mut rng = family.substream(i as u64);
            let p = 1 + (rng.uniform() * max_dim as f64) as usize % max_dim;
            let a = 1 + (rng.uniform() * p as f64) as usize % p;
            let phi = random_matrix(p, a, &mut rng);
            let sigma_prime = random_spd(a, &mut rng);
            let mean = constant_mean(phi.clone());

            let mirror = GaussianAffinePolicy::new(mean.clone(), StateCovariance::Constant(sigma_prime.clone()), DVector::zeros(p));
            let lam = recover_continuation_cov(&mirror, &0.0)?;
            let det = DeterministicAffinePolicy::new(mean.clone(), DVector::zeros(p));
            let back = mirror_of_deterministic(&det, &CovarianceFn::constant(lam)?)?.covariance_at(&0.0);
            worst5 = worst5.max(relative_error(&back, &sigma_prime));

            let sigma = random_spd(a, &mut rng);
            let total = &sigma + &sigma_prime;
            let mirror = GaussianAffinePolicy::new(mean.clone(), StateCovariance::Constant(total.clone()), DVector::zeros(p));
            let lam = recover_continuation_cov_from_gaussian(&mirror, &sigma, &0.0)?;
            let original = GaussianAffinePolicy::new(mean, StateCovariance::Constant(sigma), DVector::zeros(p));
            let back = mirror_of_gaussian(&original, &CovarianceFn::constant(lam)?)?.covariance_at(&0.0);
            worst6 = worst6.max(relative_error(&back, &total));
        }
        let tol = self.cfg.recovery_tolerance;
        Ok(vec![
            Check::new("property5/round_trip_max_error".into(), worst5, tol, Rule::AtMost, n, family.key()),
            Check::new("property6/round_trip_max_error".into(), worst6, tol, Rule::AtMost, n, family.key()),
        ])
    }

    /// The mirror of the mirror of the K-controller against the
    /// continuation under `2Λ`.
    pub fn theorem2(&self) -> Result<Vec<Check>> {
        let lam = self.constant_lambda()?;
        let doubled = compose_continuations(&lam);
        let mirror_lam = lam.scaled(self.cfg.mirror_lambda_multiplier);
        let mut checks = Vec::new();
        for (i, &theta) in self.cfg.composition_thetas.iter().enumerate() {
            let rng = self.stream(THEOREM2, i as u64);
            let det = self.deterministic(theta);
            let once = mirror_of_deterministic(&det, &mirror_lam)?;
            let twice = mirror_of_gaussian(&once, &mirror_lam)?;
            checks.push(self.return_check(format!("theorem2/theta={theta}"), (&doubled, theta), &twice, &rng)?);
        }
        Ok(checks)
    }

    pub fn all(&self) -> Result<Vec<Check>> {
        let mut checks = self.theorem1()?;
        checks.extend(self.property1()?);
        checks.extend(self.property2()?);
        checks.extend(self.property3()?);
        checks.extend(self.property4()?);
        checks.extend(self.recovery()?);
        checks.extend(self.theorem2()?);
        Ok(checks)
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let mut v = vec![0.0; rows * cols];
    rng.fill_normal(&mut v);
    DMatrix::from_vec(rows, cols, v)
}

/// `BBᵀ + I/10`, comfortably positive definite.
fn random_spd(dim: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let b = random_matrix(dim, dim, rng);
    &b * b.transpose() + DMatrix::identity(dim, dim) * 0.1
}

fn constant_mean(phi: DMatrix<f64>) -> AffineMean<f64> {
    let (p, a) = phi.shape();
    AffineMean::new(p, a, move |_: &f64| phi.clone())
}

fn relative_error(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    (got - want).amax() / want.amax().max(1.0)
}

/// Runs every check of the suite.
pub fn run_verify(cfg: &ExperimentConfig) -> anyhow::Result<VerifyReport> {
    let suite = Suite::new(cfg)?;
    let checks = suite.all()?;
    Ok(VerifyReport {
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}
