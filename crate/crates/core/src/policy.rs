//! Parameterized policies with affine mean functions.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hillcar::CarState;
use crate::linalg::{psd_factor, spd_log_det, spd_solve};
use crate::mdp::{Action, History};
use crate::rng::RandomStream;

pub type ParamVector = DVector<f64>;

type FeatureFn<S> = Arc<dyn Fn(&S) -> DMatrix<f64> + Send + Sync>;
type OffsetFn<S> = Arc<dyn Fn(&S) -> DVector<f64> + Send + Sync>;
type HistoryCovFn<S> = Arc<dyn Fn(&History<S>) -> DMatrix<f64> + Send + Sync>;

/// Samples actions conditioned on a history.
pub trait Policy<S>: Sync {
    fn action_dim(&self) -> usize;
    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action>;
}

/// A policy family indexed by a real parameter vector.
pub trait ParametricPolicy<S>: Policy<S> + Clone {
    fn theta(&self) -> &ParamVector;

    fn param_dim(&self) -> usize {
        self.theta().len()
    }

    fn with_theta(&self, theta: ParamVector) -> Self;

    /// Draw from the member of the family at `theta`.
    fn sample_action_at(&self, theta: &ParamVector, history: &History<S>, rng: &mut RandomStream) -> Result<Action>;

    fn log_density_at(&self, theta: &ParamVector, history: &History<S>, action: &Action) -> Result<f64>;

    fn log_density(&self, history: &History<S>, action: &Action) -> Result<f64> {
        self.log_density_at(self.theta(), history, action)
    }
}

/// Policies with a score `∇_θ ln π_θ(a | h)`.
pub trait ScorePolicy<S>: ParametricPolicy<S> {
    fn score(&self, history: &History<S>, action: &Action) -> Result<DVector<f64>>;
}

/// `μ_θ(s) = φ(s)ᵀ θ + b(s)` with `φ(s)` of shape `d_Θ × d_A`.
pub struct AffineMean<S> {
    param_dim: usize,
    action_dim: usize,
    features: FeatureFn<S>,
    offset: Option<OffsetFn<S>>,
}

impl<S> Clone for AffineMean<S> {
    fn clone(&self) -> Self {
        Self {
            param_dim: self.param_dim,
            action_dim: self.action_dim,
            features: Arc::clone(&self.features),
            offset: self.offset.clone(),
        }
    }
}

impl<S> fmt::Debug for AffineMean<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineMean")
            .field("param_dim", &self.param_dim)
            .field("action_dim", &self.action_dim)
            .field("offset", &self.offset.is_some())
            .finish()
    }
}

impl<S> AffineMean<S> {
    pub fn new(param_dim: usize, action_dim: usize, features: impl Fn(&S) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            param_dim,
            action_dim,
            features: Arc::new(features),
            offset: None,
        }
    }

    pub fn with_offset(mut self, offset: impl Fn(&S) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.offset = Some(Arc::new(offset));
        self
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// `∇_θ μ_θ(s) = φ(s)`, independent of `θ`.
    pub fn jacobian(&self, state: &S) -> DMatrix<f64> {
        (self.features)(state)
    }

    pub fn mean(&self, theta: &ParamVector, state: &S) -> DVector<f64> {
        let mu = self.jacobian(state).tr_mul(theta);
        match &self.offset {
            Some(b) => mu + b(state),
            None => mu,
        }
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_dim {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// Policies whose mean is an [`AffineMean`].
pub trait AffinePolicy<S> {
    fn affine_mean(&self) -> &AffineMean<S>;

    fn mean_jacobian(&self, state: &S) -> DMatrix<f64> {
        self.affine_mean().jacobian(state)
    }
}

/// Gaussian log-density `ln N(a | μ, Σ)`.
pub fn gaussian_log_density(action: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = action.len() as f64;
    let diff = action - mean;
    let log_det = spd_log_det(cov)?;
    let quad = diff.dot(&spd_solve(cov, &diff)?);
    Ok(-0.5 * (d * (2.0 * PI).ln() + log_det + quad))
}

fn draw_gaussian(mean: DVector<f64>, cov: &DMatrix<f64>, rng: &mut RandomStream) -> Result<Action> {
    let mut z = vec![0.0; mean.len()];
    rng.fill_normal(&mut z);
    let factor = psd_factor(cov)?;
    Ok(mean + factor * DVector::from_vec(z))
}

#[derive(Debug)]
pub struct DeterministicAffinePolicy<S> {
    pub mean: AffineMean<S>,
    pub theta: ParamVector,
}

impl<S> Clone for DeterministicAffinePolicy<S> {
    fn clone(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            theta: self.theta.clone(),
        }
    }
}

impl<S> DeterministicAffinePolicy<S> {
    pub fn new(mean: AffineMean<S>, theta: ParamVector) -> Self {
        assert_eq!(theta.len(), mean.param_dim(), "theta dimension");
        Self { mean, theta }
    }
}

impl<S: Sync> Policy<S> for DeterministicAffinePolicy<S> {
    fn action_dim(&self) -> usize {
        self.mean.action_dim()
    }

    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.sample_action_at(&self.theta, history, rng)
    }
}

impl<S: Sync> ParametricPolicy<S> for DeterministicAffinePolicy<S> {
    fn theta(&self) -> &ParamVector {
        &self.theta
    }

    fn with_theta(&self, theta: ParamVector) -> Self {
        Self::new(self.mean.clone(), theta)
    }

    fn sample_action_at(&self, theta: &ParamVector, history: &History<S>, _rng: &mut RandomStream) -> Result<Action> {
        self.mean.check_theta(theta)?;
        Ok(self.mean.mean(theta, history.last_state()))
    }

    fn log_density_at(&self, _theta: &ParamVector, _history: &History<S>, _action: &Action) -> Result<f64> {
        Err(Error::Deterministic)
    }
}

impl<S> AffinePolicy<S> for DeterministicAffinePolicy<S> {
    fn affine_mean(&self) -> &AffineMean<S> {
        &self.mean
    }
}

/// Action covariance as a function of the state, constant in `θ`.
pub enum StateCovariance<S> {
    /// Degenerate Gaussian: the policy acts deterministically.
    Zero,
    Constant(DMatrix<f64>),
    Function(Arc<dyn Fn(&S) -> DMatrix<f64> + Send + Sync>),
}

impl<S> Clone for StateCovariance<S> {
    fn clone(&self) -> Self {
        match self {
            Self::Zero => Self::Zero,
            Self::Constant(m) => Self::Constant(m.clone()),
            Self::Function(f) => Self::Function(Arc::clone(f)),
        }
    }
}

impl<S> fmt::Debug for StateCovariance<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(m) => write!(f, "Constant({m:?})"),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl<S> StateCovariance<S> {
    pub fn function(f: impl Fn(&S) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn eval(&self, state: &S, dim: usize) -> DMatrix<f64> {
        match self {
            Self::Zero => DMatrix::zeros(dim, dim),
            Self::Constant(m) => m.clone(),
            Self::Function(f) => f(state),
        }
    }
}

/// `N(a | μ_θ(s), Σ(s))` with `Σ` independent of `θ`.
#[derive(Debug)]
pub struct GaussianAffinePolicy<S> {
    pub mean: AffineMean<S>,
    pub covariance: StateCovariance<S>,
    pub theta: ParamVector,
}

impl<S> Clone for GaussianAffinePolicy<S> {
    fn clone(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
            theta: self.theta.clone(),
        }
    }
}

impl<S> GaussianAffinePolicy<S> {
    pub fn new(mean: AffineMean<S>, covariance: StateCovariance<S>, theta: ParamVector) -> Self {
        assert_eq!(theta.len(), mean.param_dim(), "theta dimension");
        Self { mean, covariance, theta }
    }

    /// Whether the covariance is identically zero.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.covariance, StateCovariance::Zero)
    }

    pub fn covariance_at(&self, state: &S) -> DMatrix<f64> {
        self.covariance.eval(state, self.mean.action_dim())
    }
}

impl<S: Sync> Policy<S> for GaussianAffinePolicy<S> {
    fn action_dim(&self) -> usize {
        self.mean.action_dim()
    }

    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.sample_action_at(&self.theta, history, rng)
    }
}

impl<S: Sync> ParametricPolicy<S> for GaussianAffinePolicy<S> {
    fn theta(&self) -> &ParamVector {
        &self.theta
    }

    fn with_theta(&self, theta: ParamVector) -> Self {
        Self::new(self.mean.clone(), self.covariance.clone(), theta)
    }

    fn sample_action_at(&self, theta: &ParamVector, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.mean.check_theta(theta)?;
        let s = history.last_state();
        let mu = self.mean.mean(theta, s);
        if self.is_deterministic() {
            return Ok(mu);
        }
        draw_gaussian(mu, &self.covariance_at(s), rng)
    }

    fn log_density_at(&self, theta: &ParamVector, history: &History<S>, action: &Action) -> Result<f64> {
        if self.is_deterministic() {
            return Err(Error::Deterministic);
        }
        self.mean.check_theta(theta)?;
        let s = history.last_state();
        gaussian_log_density(action, &self.mean.mean(theta, s), &self.covariance_at(s))
    }
}

impl<S: Sync> ScorePolicy<S> for GaussianAffinePolicy<S> {
    fn score(&self, history: &History<S>, action: &Action) -> Result<DVector<f64>> {
        if self.is_deterministic() {
            return Err(Error::Deterministic);
        }
        let s = history.last_state();
        let phi = self.mean.jacobian(s);
        let diff = action - self.mean.mean(&self.theta, s);
        Ok(phi * spd_solve(&self.covariance_at(s), &diff)?)
    }
}

impl<S> AffinePolicy<S> for GaussianAffinePolicy<S> {
    fn affine_mean(&self) -> &AffineMean<S> {
        &self.mean
    }
}

/// `½ ln((2πe)^d det Σ(s))`.
pub fn gaussian_entropy<S>(policy: &GaussianAffinePolicy<S>, state: &S) -> Result<f64> {
    if policy.is_deterministic() {
        return Err(Error::SingularCovariance);
    }
    let cov = policy.covariance_at(state);
    let d = cov.nrows() as f64;
    Ok(0.5 * (d * (2.0 * PI * E).ln() + spd_log_det(&cov)?))
}

/// `N(a | μ_θ(s_t), Σ′(h_t))` with a history-dependent covariance.
pub struct HistoryCovGaussianPolicy<S> {
    pub mean: AffineMean<S>,
    covariance: HistoryCovFn<S>,
    pub theta: ParamVector,
}

impl<S> Clone for HistoryCovGaussianPolicy<S> {
    fn clone(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: Arc::clone(&self.covariance),
            theta: self.theta.clone(),
        }
    }
}

impl<S> fmt::Debug for HistoryCovGaussianPolicy<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HistoryCovGaussianPolicy")
            .field("mean", &self.mean)
            .field("theta", &self.theta)
            .finish()
    }
}

impl<S> HistoryCovGaussianPolicy<S> {
    pub fn new(
        mean: AffineMean<S>,
        covariance: impl Fn(&History<S>) -> DMatrix<f64> + Send + Sync + 'static,
        theta: ParamVector,
    ) -> Self {
        assert_eq!(theta.len(), mean.param_dim(), "theta dimension");
        Self {
            mean,
            covariance: Arc::new(covariance),
            theta,
        }
    }

    pub fn covariance_at(&self, history: &History<S>) -> DMatrix<f64> {
        (self.covariance)(history)
    }
}

impl<S: Sync> Policy<S> for HistoryCovGaussianPolicy<S> {
    fn action_dim(&self) -> usize {
        self.mean.action_dim()
    }

    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.sample_action_at(&self.theta, history, rng)
    }
}

impl<S: Sync> ParametricPolicy<S> for HistoryCovGaussianPolicy<S> {
    fn theta(&self) -> &ParamVector {
        &self.theta
    }

    fn with_theta(&self, theta: ParamVector) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: Arc::clone(&self.covariance),
            theta,
        }
    }

    fn sample_action_at(&self, theta: &ParamVector, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.mean.check_theta(theta)?;
        let mu = self.mean.mean(theta, history.last_state());
        draw_gaussian(mu, &self.covariance_at(history), rng)
    }

    fn log_density_at(&self, theta: &ParamVector, history: &History<S>, action: &Action) -> Result<f64> {
        self.mean.check_theta(theta)?;
        let mu = self.mean.mean(theta, history.last_state());
        gaussian_log_density(action, &mu, &self.covariance_at(history))
    }
}

impl<S: Sync> ScorePolicy<S> for HistoryCovGaussianPolicy<S> {
    fn score(&self, history: &History<S>, action: &Action) -> Result<DVector<f64>> {
        let s = history.last_state();
        let diff = action - self.mean.mean(&self.theta, s);
        Ok(self.mean.jacobian(s) * spd_solve(&self.covariance_at(history), &diff)?)
    }
}

impl<S> AffinePolicy<S> for HistoryCovGaussianPolicy<S> {
    fn affine_mean(&self) -> &AffineMean<S> {
        &self.mean
    }
}

/// Affine Gaussian with a free, state-independent diagonal log-standard-deviation.
///
/// The parameter vector is `[θ; ln σ]`, so score-function ascent updates the
/// mean and the spread jointly.
#[derive(Debug)]
pub struct LogStdGaussianPolicy<S> {
    pub mean: AffineMean<S>,
    params: ParamVector,
}

impl<S> Clone for LogStdGaussianPolicy<S> {
    fn clone(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            params: self.params.clone(),
        }
    }
}

impl<S> LogStdGaussianPolicy<S> {
    pub fn new(mean: AffineMean<S>, theta: ParamVector, log_std: DVector<f64>) -> Self {
        assert_eq!(theta.len(), mean.param_dim(), "theta dimension");
        assert_eq!(log_std.len(), mean.action_dim(), "log_std dimension");
        let params = DVector::from_iterator(theta.len() + log_std.len(), theta.iter().chain(log_std.iter()).cloned());
        Self { mean, params }
    }

    pub fn mean_params(&self) -> DVector<f64> {
        self.params.rows(0, self.mean.param_dim()).into_owned()
    }

    pub fn log_std(&self) -> DVector<f64> {
        self.params.rows(self.mean.param_dim(), self.mean.action_dim()).into_owned()
    }

    /// The same distribution as a [`GaussianAffinePolicy`].
    pub fn to_gaussian_affine(&self) -> GaussianAffinePolicy<S> {
        let var = self.log_std().map(|l| (2.0 * l).exp());
        GaussianAffinePolicy::new(
            self.mean.clone(),
            StateCovariance::Constant(DMatrix::from_diagonal(&var)),
            self.mean_params(),
        )
    }

    /// Entropy of the action distribution; the same at every state.
    pub fn entropy(&self) -> f64 {
        let d = self.mean.action_dim() as f64;
        0.5 * d * (2.0 * PI * E).ln() + self.log_std().sum()
    }

    fn split<'a>(&self, params: &'a ParamVector) -> Result<(DVector<f64>, DVector<f64>)> {
        let (p, a) = (self.mean.param_dim(), self.mean.action_dim());
        if params.len() != p + a {
            return Err(Error::DimensionMismatch {
                expected: p + a,
                got: params.len(),
            });
        }
        Ok((params.rows(0, p).into_owned(), params.rows(p, a).into_owned()))
    }
}

impl<S: Sync> Policy<S> for LogStdGaussianPolicy<S> {
    fn action_dim(&self) -> usize {
        self.mean.action_dim()
    }

    fn sample_action(&self, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        self.sample_action_at(&self.params, history, rng)
    }
}

impl<S: Sync> ParametricPolicy<S> for LogStdGaussianPolicy<S> {
    fn theta(&self) -> &ParamVector {
        &self.params
    }

    fn with_theta(&self, params: ParamVector) -> Self {
        assert_eq!(params.len(), self.params.len(), "parameter dimension");
        Self {
            mean: self.mean.clone(),
            params,
        }
    }

    fn sample_action_at(&self, params: &ParamVector, history: &History<S>, rng: &mut RandomStream) -> Result<Action> {
        let (theta, log_std) = self.split(params)?;
        let mu = self.mean.mean(&theta, history.last_state());
        let mut z = vec![0.0; mu.len()];
        rng.fill_normal(&mut z);
        Ok(DVector::from_iterator(
            mu.len(),
            mu.iter().zip(log_std.iter()).zip(z).map(|((m, l), z)| m + l.exp() * z),
        ))
    }

    fn log_density_at(&self, params: &ParamVector, history: &History<S>, action: &Action) -> Result<f64> {
        let (theta, log_std) = self.split(params)?;
        let mu = self.mean.mean(&theta, history.last_state());
        Ok(action
            .iter()
            .zip(mu.iter())
            .zip(log_std.iter())
            .map(|((a, m), l)| {
                let z = (a - m) / l.exp();
                -0.5 * (2.0 * PI).ln() - l - 0.5 * z * z
            })
            .sum())
    }
}

impl<S: Sync> ScorePolicy<S> for LogStdGaussianPolicy<S> {
    fn score(&self, history: &History<S>, action: &Action) -> Result<DVector<f64>> {
        let (theta, log_std) = self.split(&self.params)?;
        let s = history.last_state();
        let mu = self.mean.mean(&theta, s);
        let inv_var = log_std.map(|l| (-2.0 * l).exp());
        let diff = action - mu;
        let d_theta = self.mean.jacobian(s) * diff.component_mul(&inv_var);
        let d_log_std = diff.zip_map(&inv_var, |d, iv| d * d * iv - 1.0);
        Ok(DVector::from_iterator(
            self.params.len(),
            d_theta.iter().chain(d_log_std.iter()).cloned(),
        ))
    }
}

impl<S> AffinePolicy<S> for LogStdGaussianPolicy<S> {
    fn affine_mean(&self) -> &AffineMean<S> {
        &self.mean
    }
}

/// Proportional controller `a = θ (x − x_target)`, optionally with Gaussian
/// action noise of standard deviation `σ′`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KController {
    pub theta: f64,
    pub x_target: f64,
    pub sigma_prime: f64,
}

impl KController {
    pub fn new(theta: f64, x_target: f64, sigma_prime: f64) -> Self {
        Self {
            theta,
            x_target,
            sigma_prime,
        }
    }

    pub fn mean_action(&self, x: f64) -> f64 {
        self.theta * (x - self.x_target)
    }

    pub fn affine_mean(&self) -> AffineMean<CarState> {
        k_controller_mean(self.x_target)
    }

    pub fn deterministic(&self) -> DeterministicAffinePolicy<CarState> {
        DeterministicAffinePolicy::new(self.affine_mean(), DVector::from_element(1, self.theta))
    }

    /// `N(μ_θ(x), σ′²)`; degenerate when `σ′ = 0`.
    pub fn gaussian(&self) -> GaussianAffinePolicy<CarState> {
        let covariance = if self.sigma_prime == 0.0 {
            StateCovariance::Zero
        } else {
            StateCovariance::Constant(DMatrix::from_element(1, 1, self.sigma_prime * self.sigma_prime))
        };
        GaussianAffinePolicy::new(self.affine_mean(), covariance, DVector::from_element(1, self.theta))
    }
}

/// Feature map `φ(x) = [x − x_target]`, no offset.
pub fn k_controller_mean(x_target: f64) -> AffineMean<CarState> {
    AffineMean::new(1, 1, move |s: &CarState| DMatrix::from_element(1, 1, s.x - x_target))
}
