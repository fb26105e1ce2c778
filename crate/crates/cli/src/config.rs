//! Experiment configuration: one JSON document, every field optional.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use policy_continuation::continuation::{CovarianceFn, DEFAULT_RADIAL_EPS};
use policy_continuation::hillcar::{make_hillcar_mdp, CarParams, HillCarMdp, HillProfile};
use policy_continuation::landscape::theta_grid;
use policy_continuation::optimize::{OptimizerConfig, Schedule};

/// A configuration problem located by its field path, e.g. `sweep.theta_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub environment: EnvironmentConfig,
    pub policy: PolicyConfig,
    pub continuation: ContinuationConfig,
    pub schedule: Schedule,
    pub optimizer: OptimizerConfig,
    pub method: Method,
    pub sweep: SweepConfig,
    pub basin: BasinConfig,
    pub verify: VerifyConfig,
    pub compare: CompareConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            environment: EnvironmentConfig::default(),
            policy: PolicyConfig::default(),
            continuation: ContinuationConfig::default(),
            schedule: Schedule::default(),
            optimizer: OptimizerConfig::default(),
            method: Method::Continuation,
            sweep: SweepConfig::default(),
            basin: BasinConfig::default(),
            verify: VerifyConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Valley height `h(x) = Σ c_k x^k`, ascending powers, on `[car.x_min, car.x_max]`.
    pub profile_coefficients: Vec<f64>,
    pub car: CarParams,
    pub discount: f64,
    pub horizon: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let profile = HillProfile::default();
        Self {
            profile_coefficients: profile.coefficients().to_vec(),
            car: CarParams::default(),
            discount: 0.99,
            horizon: 100,
        }
    }
}

/// The K-controller `a = θ (x − x_target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub theta0: f64,
    /// Initial log standard deviation for the entropy-regularized method.
    pub log_std0: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            theta0: 1.0,
            log_std0: 0.0,
        }
    }
}

/// Base covariance function; the schedule multiplies it per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuationConfig {
    Constant { lambda: f64 },
    StateRadial {
        sigma_ref: f64,
        #[serde(default = "default_radial_eps")]
        eps: f64,
    },
    TimeDecay { lambda: f64, beta: f64 },
}

fn default_radial_eps() -> f64 {
    DEFAULT_RADIAL_EPS
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig::StateRadial {
            sigma_ref: 1.0,
            eps: DEFAULT_RADIAL_EPS,
        }
    }
}

impl ContinuationConfig {
    pub fn build(&self, x_target: f64) -> policy_continuation::Result<CovarianceFn> {
        match *self {
            ContinuationConfig::Constant { lambda } => CovarianceFn::isotropic(lambda, 1),
            ContinuationConfig::StateRadial { sigma_ref, eps } => CovarianceFn::state_radial(sigma_ref, x_target, eps, 1),
            ContinuationConfig::TimeDecay { lambda, beta } => {
                CovarianceFn::time_decay(DMatrix::from_element(1, 1, lambda), beta)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Continuation,
    EntropyReg,
    Deterministic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Continuation => "continuation",
            Method::EntropyReg => "entropy_reg",
            Method::Deterministic => "deterministic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
    pub sigma_primes: Vec<f64>,
    pub n_rollouts: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            theta_min: -10.0,
            theta_max: 2.0,
            theta_step: 0.05,
            sigma_primes: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            n_rollouts: 1000,
        }
    }
}

/// The deterministic landscape used to label basins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub pitch: f64,
    pub n_rollouts: usize,
}

impl Default for BasinConfig {
    fn default() -> Self {
        Self {
            theta_min: -10.0,
            theta_max: 2.0,
            pitch: 0.01,
            n_rollouts: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Rollouts on each side of a return comparison.
    pub n_rollouts: usize,
    /// Mixture draws per moment or distribution check.
    pub n_mixture: usize,
    pub thetas: Vec<f64>,
    /// θ values of the composition check.
    pub composition_thetas: Vec<f64>,
    /// Positions of the fixed states of the moment checks.
    pub states: Vec<f64>,
    pub constant_lambda: f64,
    pub radial_sigma_ref: f64,
    pub decay_lambda: f64,
    pub decay_beta: f64,
    /// Action noise of the Gaussian original in the Gaussian-mirror check.
    pub gaussian_sigma: f64,
    /// Combined standard errors allowed between two return estimates.
    pub return_tolerance_se: f64,
    /// Standard errors allowed for sample means and variances.
    pub moment_tolerance_se: f64,
    pub ks_alpha: f64,
    pub recovery_instances: usize,
    pub recovery_max_dim: usize,
    pub recovery_tolerance: f64,
    /// Multiplier applied to Λ on the mirror side of the return-equality
    /// checks. Anything but 1 should make them fail.
    pub mirror_lambda_multiplier: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 10_000,
            n_mixture: 10_000,
            thetas: vec![-4.0, -3.0, -2.3, -1.5, -0.8, -0.3, 0.0, 0.5, 1.0],
            composition_thetas: vec![-3.0, -1.5, -0.3, 0.0, 1.0],
            states: vec![-3.5, -2.0, -0.5, 0.5, 4.0],
            constant_lambda: 0.04,
            radial_sigma_ref: 1.0,
            decay_lambda: 0.25,
            decay_beta: 0.97,
            gaussian_sigma: 0.5,
            return_tolerance_se: 3.0,
            moment_tolerance_se: 4.0,
            ks_alpha: 0.01,
            recovery_instances: 100,
            recovery_max_dim: 8,
            recovery_tolerance: 1e-10,
            mirror_lambda_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            methods: vec![Method::Continuation, Method::Deterministic],
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path of the first problem.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    /// SHA-256 of the compact JSON form. The output directory is left out
    /// because it has no effect on results.
    pub fn hash(&self) -> String {
        let mut copy = self.clone();
        copy.out_dir = PathBuf::new();
        let compact = serde_json::to_string(&copy).expect("config serializes");
        Sha256::digest(compact.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn profile(&self) -> Result<HillProfile, ConfigError> {
        let car = &self.environment.car;
        HillProfile::from_coefficients(self.environment.profile_coefficients.clone(), car.x_min, car.x_max)
            .or_else(|e| err("environment.profile_coefficients", e.to_string()))
    }

    pub fn mdp(&self) -> Result<HillCarMdp, ConfigError> {
        let mut mdp = make_hillcar_mdp(self.environment.car.clone(), self.profile()?)
            .or_else(|e| err("environment.car", e.to_string()))?;
        mdp.discount = self.environment.discount;
        mdp.horizon = self.environment.horizon;
        Ok(mdp)
    }

    /// Optimizer settings for one run seeded with `seed`.
    pub fn optimizer_for(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            seed,
            ..self.optimizer.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let env = &self.environment;
        if !(env.discount > 0.0 && env.discount <= 1.0) {
            return err("environment.discount", format!("must lie in (0, 1], got {}", env.discount));
        }
        if env.horizon == 0 {
            return err("environment.horizon", "must be positive");
        }
        let mdp = self.mdp()?;
        let x_target = mdp.profile.x_target();

        if !self.policy.theta0.is_finite() {
            return err("policy.theta0", "must be finite");
        }
        if !self.policy.log_std0.is_finite() {
            return err("policy.log_std0", "must be finite");
        }
        if let Err(e) = self.continuation.build(x_target) {
            return err("continuation", e.to_string());
        }
        if let Err(e) = self.schedule.scales() {
            return err("schedule", e.to_string());
        }
        if let Err(e) = self.optimizer.validate() {
            // Optimizer messages lead with the offending field.
            let message = match &e {
                policy_continuation::Error::InvalidArgument(m) => m.clone(),
                other => other.to_string(),
            };
            let path = match message.split_once(" must") {
                Some((field, _)) if !field.contains(' ') => format!("optimizer.{field}"),
                _ => "optimizer".to_string(),
            };
            return err(&path, message);
        }

        let s = &self.sweep;
        if let Err(e) = theta_grid(s.theta_min, s.theta_max, s.theta_step) {
            return err("sweep", e.to_string());
        }
        if s.sigma_primes.is_empty() {
            return err("sweep.sigma_primes", "must not be empty");
        }
        if let Some(bad) = s.sigma_primes.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return err("sweep.sigma_primes", format!("entries must be finite and >= 0, got {bad}"));
        }
        if s.sigma_primes.windows(2).any(|w| w[1] <= w[0]) {
            return err("sweep.sigma_primes", "must be strictly increasing");
        }
        if s.n_rollouts < 2 {
            return err("sweep.n_rollouts", "must be at least 2");
        }

        let b = &self.basin;
        if let Err(e) = theta_grid(b.theta_min, b.theta_max, b.pitch) {
            return err("basin", e.to_string());
        }
        if b.n_rollouts < 2 {
            return err("basin.n_rollouts", "must be at least 2");
        }

        let v = &self.verify;
        if v.n_rollouts < 2 {
            return err("verify.n_rollouts", "must be at least 2");
        }
        if v.n_mixture < 2 {
            return err("verify.n_mixture", "must be at least 2");
        }
        for (path, list) in [
            ("verify.thetas", &v.thetas),
            ("verify.composition_thetas", &v.composition_thetas),
            ("verify.states", &v.states),
        ] {
            if list.is_empty() || list.iter().any(|t| !t.is_finite()) {
                return err(path, "must be a non-empty list of finite numbers");
            }
        }
        let car = &self.environment.car;
        if let Some(bad) = v.states.iter().find(|x| !(car.x_min..=car.x_max).contains(*x)) {
            return err("verify.states", format!("{bad} lies outside the position bounds"));
        }
        for (path, value) in [
            ("verify.constant_lambda", v.constant_lambda),
            ("verify.radial_sigma_ref", v.radial_sigma_ref),
            ("verify.decay_lambda", v.decay_lambda),
            ("verify.gaussian_sigma", v.gaussian_sigma),
            ("verify.return_tolerance_se", v.return_tolerance_se),
            ("verify.moment_tolerance_se", v.moment_tolerance_se),
            ("verify.recovery_tolerance", v.recovery_tolerance),
            ("verify.mirror_lambda_multiplier", v.mirror_lambda_multiplier),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return err(path, format!("must be positive, got {value}"));
            }
        }
        if !(v.decay_beta > 0.0 && v.decay_beta <= 1.0) {
            return err("verify.decay_beta", format!("must lie in (0, 1], got {}", v.decay_beta));
        }
        if !(v.ks_alpha > 0.0 && v.ks_alpha < 1.0) {
            return err("verify.ks_alpha", format!("must lie in (0, 1), got {}", v.ks_alpha));
        }
        if v.recovery_instances == 0 {
            return err("verify.recovery_instances", "must be positive");
        }
        if v.recovery_max_dim == 0 {
            return err("verify.recovery_max_dim", "must be positive");
        }

        if self.compare.seeds.is_empty() {
            return err("compare.seeds", "must not be empty");
        }
        if self.compare.methods.is_empty() {
            return err("compare.methods", "must not be empty");
        }
        Ok(())
    }
}
