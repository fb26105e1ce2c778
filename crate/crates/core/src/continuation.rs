//! Continuations of the return, their mirror policies, and the inverse
//! construction recovering a continuation from a mirror.
//!
//! A continuation perturbs the policy parameter at every step,
//! `θ_t ~ N(θ, Λ(h_t))`, and acts with the original policy at `θ_t`. The
//! expected return of that process is the return of a mirror policy. For
//! affine means and Gaussian perturbations the mirror has a closed form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_psd, is_zero, psd_factor};
use crate::mdp::{estimate_return, Action, History, Mdp, ReturnEstimate};
use crate::policy::{
    AffineMean, DeterministicAffinePolicy, GaussianAffinePolicy, HistoryCovGaussianPolicy, ParamVector,
    ParametricPolicy, Policy, StateCovariance,
};
use crate::rng::RandomStream;
use crate::stats;

/// States with a scalar position, as used by the radial covariance.
pub trait Positioned {
    fn position(&self) -> f64;
}

impl Positioned for f64 {
    fn position(&self) -> f64 {
        *self
    }
}

impl Positioned for DVector<f64> {
    /// First coordinate.
    fn position(&self) -> f64 {
        self[0]
    }
}

/// Regularizer for the radial covariance at `x = x_target`.
pub const DEFAULT_RADIAL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKind {
    /// `Λ(h) = Λ₀`.
    Constant(DMatrix<f64>),
    /// `Λ(h) = σ_ref² / max((x − x_target)², ε) · I`, with `x` the last position.
    StateRadial {
        sigma_ref: f64,
        x_target: f64,
        eps: f64,
        dim: usize,
    },
    /// `Λ(h_t) = Λ₀ β^t`.
    TimeDecay { base: DMatrix<f64>, beta: f64 },
}

/// A covariance function `Λ: H → R^{d_Θ × d_Θ}`, multiplied by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFn {
    kind: CovarianceKind,
    scale: f64,
}

fn check_base(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
    }
    psd_factor(m).map(|_| ())
}

impl CovarianceFn {
    pub fn constant(base: DMatrix<f64>) -> Result<Self> {
        check_base(&base)?;
        Ok(Self {
            kind: CovarianceKind::Constant(base),
            scale: 1.0,
        })
    }

    /// `λ I` in dimension `dim`.
    pub fn isotropic(lambda: f64, dim: usize) -> Result<Self> {
        Self::constant(DMatrix::identity(dim, dim) * lambda)
    }

    pub fn state_radial(sigma_ref: f64, x_target: f64, eps: f64, dim: usize) -> Result<Self> {
        if !(sigma_ref.is_finite() && sigma_ref >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_ref must be finite and >= 0, got {sigma_ref}")));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if !x_target.is_finite() || dim == 0 {
            return Err(Error::InvalidArgument("x_target must be finite and dim positive".into()));
        }
        Ok(Self {
            kind: CovarianceKind::StateRadial {
                sigma_ref,
                x_target,
                eps,
                dim,
            },
            scale: 1.0,
        })
    }

    pub fn time_decay(base: DMatrix<f64>, beta: f64) -> Result<Self> {
        check_base(&base)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
        }
        Ok(Self {
            kind: CovarianceKind::TimeDecay { base, beta },
            scale: 1.0,
        })
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `c · Λ`. Panics if `c` is negative or not finite.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c.is_finite() && c >= 0.0, "scale must be finite and nonnegative");
        Self {
            kind: self.kind.clone(),
            scale: self.scale * c,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            CovarianceKind::Constant(m) | CovarianceKind::TimeDecay { base: m, .. } => m.nrows(),
            CovarianceKind::StateRadial { dim, .. } => *dim,
        }
    }

    /// Whether `Λ(h)` depends on `h` only through its last state.
    pub fn is_markov(&self) -> bool {
        match &self.kind {
            CovarianceKind::TimeDecay { beta, .. } => *beta == 1.0,
            _ => true,
        }
    }

    /// Whether `Λ(h) = 0` for every history.
    pub fn is_identically_zero(&self) -> bool {
        self.scale == 0.0
            || match &self.kind {
                CovarianceKind::Constant(m) | CovarianceKind::TimeDecay { base: m, .. } => is_zero(m),
                CovarianceKind::StateRadial { sigma_ref, .. } => *sigma_ref == 0.0,
            }
    }

    fn at(&self, position: Option<f64>, time: usize) -> DMatrix<f64> {
        match &self.kind {
            CovarianceKind::Constant(m) => m * self.scale,
            CovarianceKind::StateRadial {
                sigma_ref,
                x_target,
                eps,
                dim,
            } => {
                let x = position.expect("radial covariance needs a position");
                let d = x - x_target;
                let lambda = self.scale * sigma_ref * sigma_ref / (d * d).max(*eps);
                DMatrix::identity(*dim, *dim) * lambda
            }
            CovarianceKind::TimeDecay { base, beta } => base * (self.scale * beta.powi(time as i32)),
        }
    }

    pub fn eval<S: Positioned>(&self, history: &History<S>) -> DMatrix<f64> {
        self.at(Some(history.last_state().position()), history.time())
    }

    /// `Λ(s)` for a Markov covariance function.
    pub fn eval_state<S: Positioned>(&self, state: &S) -> Result<DMatrix<f64>> {
        if !self.is_markov() {
            return Err(Error::HistoryDependent);
        }
        Ok(self.at(Some(state.position()), 0))
    }
}

/// `θ_t ~ N(θ, Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationDist {
    pub mean: ParamVector,
    pub covariance: DMatrix<f64>,
}

impl ContinuationDist {
    pub fn new(mean: ParamVector, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || !covariance.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: covariance.nrows(),
            });
        }
        Ok(Self { mean, covariance })
    }

    /// Draws one parameter. A zero covariance returns the mean without
    /// consuming randomness.
    pub fn sample(&self, rng: &mut RandomStream) -> Result<ParamVector> {
        if is_zero(&self.covariance) {
            return Ok(self.mean.clone());
        }
        let factor = psd_factor(&self.covariance)?;
        let mut z = vec![0.0; self.mean.len()];
        rng.fill_normal(&mut z);
        Ok(&self.mean + factor * DVector::from_vec(z))
    }
}

/// The history-dependent mirror of any parametric policy: resample
/// `θ_t ~ N(θ, Λ(h_t))` at every step and act with the original at `θ_t`.
///
/// Its return is the continuation of the original's return.
#[derive(Debug, Clone)]
pub struct MixtureMirror<P> {
    pub original: P,
    pub theta: ParamVector,
    pub lam: CovarianceFn,
}

impl<P> MixtureMirror<P> {
    pub fn new(original: P, theta: ParamVector, lam: CovarianceFn) -> Result<Self> {
        if lam.dim() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: lam.dim(),
            });
        }
        Ok(Self { original, theta, lam })
    }
}

impl<S, P> Policy<S> for MixtureMirror<P>
where
    S: Positioned + Sync,
    P: ParametricPolicy<S>,
{
    fn action_dim(&self) -> usize {
        self.original.action_dim()
    }

    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        let lam = self.lam.eval(history);
        if is_zero(&lam) {
            return self.original.sample_action_at(&self.theta, history, rng);
        }
        let theta_t = ContinuationDist::new(self.theta.clone(), lam)?.sample(rng)?;
        self.original.sample_action_at(&theta_t, history, rng)
    }
}

/// Monte-Carlo continuation of the return of `original` at `theta`.
///
/// Where `Λ(h_t) = 0` no parameter draw is made, so `Λ ≡ 0` reproduces
/// [`estimate_return`] of the original at `theta` exactly for the same stream.
pub fn estimate_continuation<M, P>(
    mdp: &M,
    original: &P,
    theta: &ParamVector,
    lam: &CovarianceFn,
    n: usize,
    rng: &RandomStream,
) -> Result<ReturnEstimate>
where
    M: Mdp,
    M::State: Positioned,
    P: ParametricPolicy<M::State>,
{
    if theta.len() != original.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: original.param_dim(),
            got: theta.len(),
        });
    }
    let mirror = MixtureMirror::new(original.clone(), theta.clone(), lam.clone())?;
    estimate_return(mdp, &mirror, n, rng)
}

/// `m` independent actions of the mixture mirror at a fixed history; draw `j`
/// uses substream `j`.
pub fn sample_mixture_actions<S, P>(
    mirror: &MixtureMirror<P>,
    history: &History<S>,
    m: usize,
    rng: &RandomStream,
) -> Result<Vec<Action>>
where
    S: Positioned + Sync,
    P: ParametricPolicy<S>,
{
    (0..m)
        .map(|j| mirror.sample_action(history, &mut rng.substream(j as u64)))
        .collect()
}

/// `φᵀ Λ φ` for `φ` of shape `d_Θ × d_A`.
pub fn mirror_covariance(phi: &DMatrix<f64>, lam: &DMatrix<f64>) -> DMatrix<f64> {
    let c = phi.tr_mul(&(lam * phi));
    (&c + c.transpose()) * 0.5
}

fn require_markov(lam: &CovarianceFn) -> Result<()> {
    if lam.is_markov() {
        Ok(())
    } else {
        Err(Error::HistoryDependent)
    }
}

fn require_dim<S>(mean: &AffineMean<S>, lam: &CovarianceFn) -> Result<()> {
    if lam.dim() != mean.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: mean.param_dim(),
            got: lam.dim(),
        });
    }
    Ok(())
}

/// Markov mirror of a deterministic affine policy under a state-dependent
/// `Λ`: `N(μ_θ(s), φ(s)ᵀ Λ(s) φ(s))`.
pub fn mirror_of_deterministic<S>(
    original: &DeterministicAffinePolicy<S>,
    lam: &CovarianceFn,
) -> Result<GaussianAffinePolicy<S>>
where
    S: Positioned + 'static,
{
    require_markov(lam)?;
    require_dim(&original.mean, lam)?;
    let covariance = if lam.is_identically_zero() {
        StateCovariance::Zero
    } else {
        let mean = original.mean.clone();
        let lam = lam.clone();
        StateCovariance::function(move |s: &S| {
            let l = lam.eval_state(s).expect("checked Markov");
            mirror_covariance(&mean.jacobian(s), &l)
        })
    };
    Ok(GaussianAffinePolicy::new(original.mean.clone(), covariance, original.theta.clone()))
}

/// History-dependent mirror of a deterministic affine policy:
/// `Σ′(h) = φ(s)ᵀ Λ(h) φ(s)` with `s` the last state of `h`.
pub fn mirror_of_deterministic_history<S>(
    original: &DeterministicAffinePolicy<S>,
    lam: &CovarianceFn,
) -> Result<HistoryCovGaussianPolicy<S>>
where
    S: Positioned + 'static,
{
    require_dim(&original.mean, lam)?;
    let mean = original.mean.clone();
    let lam = lam.clone();
    Ok(HistoryCovGaussianPolicy::new(
        original.mean.clone(),
        move |h: &History<S>| mirror_covariance(&mean.jacobian(h.last_state()), &lam.eval(h)),
        original.theta.clone(),
    ))
}

/// Mirror of a Gaussian affine policy whose covariance does not depend on
/// `θ`: same mean, `Σ′(s) = Σ(s) + φ(s)ᵀ Λ(s) φ(s)`.
pub fn mirror_of_gaussian<S>(original: &GaussianAffinePolicy<S>, lam: &CovarianceFn) -> Result<GaussianAffinePolicy<S>>
where
    S: Positioned + 'static,
{
    require_markov(lam)?;
    require_dim(&original.mean, lam)?;
    if lam.is_identically_zero() {
        return Ok(original.clone());
    }
    let mean = original.mean.clone();
    let base = original.covariance.clone();
    let dim = mean.action_dim();
    let lam = lam.clone();
    let covariance = StateCovariance::function(move |s: &S| {
        let l = lam.eval_state(s).expect("checked Markov");
        base.eval(s, dim) + mirror_covariance(&mean.jacobian(s), &l)
    });
    Ok(GaussianAffinePolicy::new(original.mean.clone(), covariance, original.theta.clone()))
}

/// Densities `π_{θ_j}(a | h)` for `θ_j ~ N(θ, Λ(h))`, `j < m`; draw `j` uses
/// substream `j`.
pub fn mixture_density_terms<S, P>(
    original: &P,
    theta: &ParamVector,
    lam: &CovarianceFn,
    history: &History<S>,
    action: &Action,
    m: usize,
    rng: &RandomStream,
) -> Result<Vec<f64>>
where
    S: Positioned,
    P: ParametricPolicy<S>,
{
    let dist = ContinuationDist::new(theta.clone(), lam.eval(history))?;
    (0..m)
        .map(|j| {
            let theta_j = dist.sample(&mut rng.substream(j as u64))?;
            original.log_density_at(&theta_j, history, action).map(f64::exp)
        })
        .collect()
}

/// `ln((1/m) Σ_j π_{θ_j}(a | h))`, `θ_j ~ N(θ, Λ(h))`: a Monte-Carlo
/// evaluation of the mixture mirror's density.
///
/// Computed with log-sum-exp; when `Λ(h) = 0` this is the original
/// log-density at `θ` exactly.
pub fn mirror_mixture_logdensity<S, P>(
    original: &P,
    theta: &ParamVector,
    lam: &CovarianceFn,
    history: &History<S>,
    action: &Action,
    m: usize,
    rng: &RandomStream,
) -> Result<f64>
where
    S: Positioned,
    P: ParametricPolicy<S>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let cov = lam.eval(history);
    if is_zero(&cov) {
        return original.log_density_at(theta, history, action);
    }
    let dist = ContinuationDist::new(theta.clone(), cov)?;
    let logs: Vec<f64> = (0..m)
        .map(|j| {
            let theta_j = dist.sample(&mut rng.substream(j as u64))?;
            original.log_density_at(&theta_j, history, action)
        })
        .collect::<Result<_>>()?;
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(top);
    }
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    Ok(top + (sum / m as f64).ln())
}

/// Minimum-Frobenius-norm `Λ` with `φᵀ Λ φ = Σ′`:
/// `Λ = φ (φᵀφ)⁻¹ Σ′ (φᵀφ)⁻¹ φᵀ`.
pub fn minimum_norm_continuation(phi: &DMatrix<f64>, sigma_prime: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (param_dim, action_dim) = phi.shape();
    if action_dim > param_dim {
        return Err(Error::ActionDimExceedsParamDim { action_dim, param_dim });
    }
    if sigma_prime.shape() != (action_dim, action_dim) {
        return Err(Error::DimensionMismatch {
            expected: action_dim,
            got: sigma_prime.nrows(),
        });
    }
    psd_factor(sigma_prime)?;
    let sv = phi.singular_values();
    let largest = sv.max();
    if largest == 0.0 || sv.min() <= largest * 1e-12 * param_dim as f64 {
        return Err(Error::RankDeficient);
    }
    let gram = phi.tr_mul(phi);
    let gram_inv = gram.cholesky().ok_or(Error::RankDeficient)?.inverse();
    let left = phi * &gram_inv;
    let lam = &left * sigma_prime * left.transpose();
    Ok((&lam + lam.transpose()) * 0.5)
}

/// A continuation covariance at `s` whose deterministic mirror is `mirror`
/// there.
pub fn recover_continuation_cov<S>(mirror: &GaussianAffinePolicy<S>, state: &S) -> Result<DMatrix<f64>> {
    minimum_norm_continuation(&mirror.mean.jacobian(state), &mirror.covariance_at(state))
}

/// Splits a Gaussian mirror `Σ′` as `Σ + C` around a chosen original
/// covariance `Σ ⪯ Σ′` and recovers the continuation of `C = Σ′ − Σ`.
pub fn recover_continuation_cov_from_gaussian<S>(
    mirror: &GaussianAffinePolicy<S>,
    original_cov: &DMatrix<f64>,
    state: &S,
) -> Result<DMatrix<f64>> {
    let sigma_prime = mirror.covariance_at(state);
    if original_cov.shape() != sigma_prime.shape() {
        return Err(Error::DimensionMismatch {
            expected: sigma_prime.nrows(),
            got: original_cov.nrows(),
        });
    }
    let c = &sigma_prime - original_cov;
    let c = (&c + c.transpose()) * 0.5;
    let scale = sigma_prime.amax().max(original_cov.amax()).max(1.0);
    if !is_psd(&c, 1e-12 * scale) {
        let min_eigenvalue = c.symmetric_eigenvalues().min();
        return Err(Error::NotPsd { min_eigenvalue });
    }
    minimum_norm_continuation(&mirror.mean.jacobian(state), &c)
}

/// The continuation whose deterministic mirror equals the mirror of the
/// mirror under `Λ`: the convolution of two `N(·, Λ)` kernels, `2Λ`.
pub fn compose_continuations(lam: &CovarianceFn) -> CovarianceFn {
    lam.scaled(2.0)
}

/// Sample mean and covariance of actions, for moment checks.
pub fn action_moments(actions: &[Action]) -> (DVector<f64>, DMatrix<f64>) {
    let d = actions.first().map_or(0, |a| a.len());
    let n = actions.len() as f64;
    let mean = actions.iter().fold(DVector::zeros(d), |acc, a| acc + a) / n;
    let cov = actions.iter().fold(DMatrix::zeros(d, d), |acc, a| {
        let c = a - &mean;
        acc + &c * c.transpose()
    }) / (n - 1.0);
    (mean, cov)
}

/// Per-coordinate standard errors of the sample mean.
pub fn action_mean_stderr(actions: &[Action], coord: usize) -> f64 {
    let xs: Vec<f64> = actions.iter().map(|a| a[coord]).collect();
    stats::standard_error(&xs)
}
