//! Discounted MDPs, histories, rollouts and Monte-Carlo return estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::map_streams;
use crate::policy::Policy;
use crate::rng::RandomStream;

pub type Action = DVector<f64>;

/// Substream of a rollout stream feeding the environment.
const ENV_STREAM: u64 = 0;
/// Substream of a rollout stream feeding the policy.
const POLICY_STREAM: u64 = 1;

/// A discounted MDP truncated at a finite horizon.
pub trait Mdp: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;

    fn action_dim(&self) -> usize;
    fn initial_state(&self, rng: &mut RandomStream) -> Self::State;
    fn transition(&self, state: &Self::State, action: &Action, rng: &mut RandomStream) -> Self::State;
    fn reward(&self, state: &Self::State, action: &Action) -> f64;
    fn discount(&self) -> f64;
    fn horizon(&self) -> usize;
    /// Bound on `|reward|` over reachable states.
    fn reward_bound(&self) -> f64;
}

/// Alternating sequence `s_0, a_0, s_1, …, s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct History<S> {
    states: Vec<S>,
    actions: Vec<Action>,
}

impl<S> History<S> {
    pub fn new(initial: S) -> Self {
        Self {
            states: vec![initial],
            actions: Vec::new(),
        }
    }

    pub fn from_parts(states: Vec<S>, actions: Vec<Action>) -> Result<Self> {
        if states.len() != actions.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: actions.len() + 1,
                got: states.len(),
            });
        }
        Ok(Self { states, actions })
    }

    pub fn push(&mut self, action: Action, next: S) {
        self.actions.push(action);
        self.states.push(next);
    }

    pub fn last_state(&self) -> &S {
        self.states.last().expect("history always holds a state")
    }

    /// Time index `t` of the last state.
    pub fn time(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub history: History<S>,
    pub rewards: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn discounted_return(&self, discount: f64) -> f64 {
        discounted_sum(&self.rewards, discount)
    }
}

/// `Σ_t γ^t r_t`.
pub fn discounted_sum(rewards: &[f64], discount: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += weight * r;
        weight *= discount;
    }
    total
}

pub fn discounted_return<S>(traj: &Trajectory<S>, discount: f64) -> f64 {
    traj.discounted_return(discount)
}

/// Runs one episode of `mdp.horizon()` transitions.
///
/// The environment and the policy read from separate substreams of `rng`, so
/// the environment noise of rollout `i` does not depend on how many draws the
/// policy makes.
pub fn rollout<M, P>(mdp: &M, policy: &P, rng: &RandomStream) -> Result<Trajectory<M::State>>
where
    M: Mdp,
    P: Policy<M::State> + ?Sized,
{
    rollout_inspect(mdp, policy, rng, |_, _| Ok(()))
}

/// [`rollout`] with a hook called as `on_step(h_t, a_t)` before each transition.
pub fn rollout_inspect<M, P, F>(
    mdp: &M,
    policy: &P,
    rng: &RandomStream,
    mut on_step: F,
) -> Result<Trajectory<M::State>>
where
    M: Mdp,
    P: Policy<M::State> + ?Sized,
    F: FnMut(&History<M::State>, &Action) -> Result<()>,
{
    let mut env_rng = rng.substream(ENV_STREAM);
    let mut policy_rng = rng.substream(POLICY_STREAM);
    let horizon = mdp.horizon();
    let mut history = History::new(mdp.initial_state(&mut env_rng));
    history.states.reserve(horizon);
    history.actions.reserve(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let action = policy.sample_action(&history, &mut policy_rng)?;
        if action.len() != mdp.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: mdp.action_dim(),
                got: action.len(),
            });
        }
        on_step(&history, &action)?;
        let state = history.last_state();
        rewards.push(mdp.reward(state, &action));
        let next = mdp.transition(state, &action, &mut env_rng);
        history.push(action, next);
    }
    Ok(Trajectory { history, rewards })
}

/// Monte-Carlo estimate of an expected return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// Per-rollout returns in stream-index order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl ReturnEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len();
        let mean = crate::stats::mean(&samples);
        let stderr = if n > 1 {
            crate::stats::standard_error(&samples)
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            n_samples: n,
            samples,
        }
    }

    /// A noiseless value, for deterministic objectives.
    pub fn exact(value: f64) -> Self {
        Self::from_samples(vec![value])
    }

    /// `sqrt(se₁² + se₂²)`.
    pub fn combined_stderr(&self, other: &ReturnEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Mean of `n` independent discounted returns; rollout `i` uses substream `i`
/// of `rng`.
pub fn estimate_return<M, P>(mdp: &M, policy: &P, n: usize, rng: &RandomStream) -> Result<ReturnEstimate>
where
    M: Mdp,
    P: Policy<M::State> + ?Sized,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rollouts, got {n}")));
    }
    let discount = mdp.discount();
    let returns: Result<Vec<f64>> = map_streams(rng, n, |stream| {
        rollout(mdp, policy, &stream).map(|t| t.discounted_return(discount))
    })
    .into_iter()
    .collect();
    Ok(ReturnEstimate::from_samples(returns?))
}

/// Small MDPs with closed-form returns, used as oracles.
pub mod toy {
    use super::*;

    /// Every step pays `value` whatever the action; the state is a dummy scalar.
    #[derive(Debug, Clone)]
    pub struct ConstantRewardMdp {
        pub value: f64,
        pub discount: f64,
        pub horizon: usize,
        pub action_dim: usize,
    }

    impl Mdp for ConstantRewardMdp {
        type State = f64;

        fn action_dim(&self) -> usize {
            self.action_dim
        }
        fn initial_state(&self, _rng: &mut RandomStream) -> f64 {
            0.0
        }
        fn transition(&self, _s: &f64, _a: &Action, rng: &mut RandomStream) -> f64 {
            rng.normal()
        }
        fn reward(&self, _s: &f64, _a: &Action) -> f64 {
            self.value
        }
        fn discount(&self) -> f64 {
            self.discount
        }
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn reward_bound(&self) -> f64 {
            self.value.abs()
        }
    }

    /// One step, reward `weights · a`; the state is the constant `1.0`.
    #[derive(Debug, Clone)]
    pub struct LinearBandit {
        pub weights: DVector<f64>,
    }

    impl Mdp for LinearBandit {
        type State = f64;

        fn action_dim(&self) -> usize {
            self.weights.len()
        }
        fn initial_state(&self, _rng: &mut RandomStream) -> f64 {
            1.0
        }
        fn transition(&self, s: &f64, _a: &Action, _rng: &mut RandomStream) -> f64 {
            *s
        }
        fn reward(&self, _s: &f64, a: &Action) -> f64 {
            self.weights.dot(a)
        }
        fn discount(&self) -> f64 {
            0.0
        }
        fn horizon(&self) -> usize {
            1
        }
        fn reward_bound(&self) -> f64 {
            f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;
    use crate::policy::{AffineMean, DeterministicAffinePolicy, GaussianAffinePolicy, StateCovariance};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_gaussian(theta: f64, var: f64) -> GaussianAffinePolicy<f64> {
        let mean = AffineMean::new(1, 1, |_: &f64| DMatrix::from_element(1, 1, 1.0));
        GaussianAffinePolicy::new(
            mean,
            StateCovariance::Constant(DMatrix::from_element(1, 1, var)),
            DVector::from_element(1, theta),
        )
    }

    fn constant_mdp(horizon: usize, discount: f64) -> ConstantRewardMdp {
        ConstantRewardMdp {
            value: 1.0,
            discount,
            horizon,
            action_dim: 1,
        }
    }

    #[test]
    fn rollout_lengths() {
        let mdp = constant_mdp(1, 0.9);
        let t = rollout(&mdp, &scalar_gaussian(0.0, 1.0), &RandomStream::new(0)).unwrap();
        assert_eq!(t.history.states().len(), 2);
        assert_eq!(t.history.actions().len(), 1);
        assert_eq!(t.rewards.len(), 1);

        let mdp = constant_mdp(37, 0.9);
        let t = rollout(&mdp, &scalar_gaussian(0.0, 1.0), &RandomStream::new(0)).unwrap();
        assert_eq!(t.history.states().len(), 38);
        assert_eq!(t.history.time(), 37);
    }

    #[test]
    fn rollout_is_deterministic_under_seed() {
        let mdp = constant_mdp(20, 0.9);
        let p = scalar_gaussian(0.3, 2.0);
        let a = rollout(&mdp, &p, &RandomStream::new(42)).unwrap();
        let b = rollout(&mdp, &p, &RandomStream::new(42)).unwrap();
        assert_eq!(a, b);
        let c = rollout(&mdp, &p, &RandomStream::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rewards_follow_reward_fn() {
        let mdp = LinearBandit {
            weights: DVector::from_element(1, 2.0),
        };
        let t = rollout(&mdp, &scalar_gaussian(0.0, 1.0), &RandomStream::new(1)).unwrap();
        assert_eq!(t.rewards[0], 2.0 * t.history.actions()[0][0]);
    }

    #[test]
    fn geometric_return() {
        let rewards = vec![1.0; 100];
        let expected = (1.0 - 0.99f64.powi(100)) / 0.01;
        assert_relative_eq!(discounted_sum(&rewards, 0.99), expected, epsilon = 1e-10);
        assert_relative_eq!(expected, 63.396_765_872_677_5, epsilon = 1e-9);
    }

    #[test]
    fn zero_discount_and_zero_rewards() {
        assert_eq!(discounted_sum(&[3.5, 7.0, -2.0], 0.0), 3.5);
        assert_eq!(discounted_sum(&[0.0; 10], 0.99), 0.0);
    }

    #[test]
    fn truncation_bias_bound() {
        // Constant reward ρ: infinite return ρ/(1−γ); truncated return differs by ργ^T/(1−γ).
        for &(gamma, horizon) in &[(0.99, 100usize), (0.9, 10), (0.5, 3)] {
            let rho_max = 1.0;
            let truncated = discounted_sum(&vec![rho_max; horizon], gamma);
            let infinite = rho_max / (1.0 - gamma);
            let bound = rho_max * gamma.powi(horizon as i32) / (1.0 - gamma);
            assert!((infinite - truncated).abs() <= bound * (1.0 + 1e-12));
            assert_relative_eq!((infinite - truncated).abs(), bound, max_relative = 1e-9);
        }
    }

    #[test]
    fn reward_scaling_is_linear() {
        let rewards = [0.3, -1.2, 4.0, 0.7];
        let c = -2.5;
        let scaled: Vec<f64> = rewards.iter().map(|r| c * r).collect();
        assert_relative_eq!(discounted_sum(&scaled, 0.9), c * discounted_sum(&rewards, 0.9), max_relative = 1e-14);
    }

    #[test]
    fn deterministic_everything_has_zero_stderr() {
        let mdp = LinearBandit {
            weights: DVector::from_element(1, 1.0),
        };
        let mean = AffineMean::new(1, 1, |_: &f64| DMatrix::from_element(1, 1, 1.0));
        let p = DeterministicAffinePolicy::new(mean, DVector::from_element(1, 2.0));
        let est = estimate_return(&mdp, &p, 50, &RandomStream::new(0)).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.mean, 2.0);
        assert_eq!(est.n_samples, 50);
    }

    #[test]
    fn constant_reward_estimate_is_geometric_sum() {
        let mdp = constant_mdp(100, 0.99);
        let est = estimate_return(&mdp, &scalar_gaussian(5.0, 3.0), 10, &RandomStream::new(9)).unwrap();
        assert_relative_eq!(est.mean, (1.0 - 0.99f64.powi(100)) / 0.01, epsilon = 1e-10);
    }

    #[test]
    fn estimate_requires_two_rollouts() {
        let mdp = constant_mdp(3, 0.9);
        assert!(estimate_return(&mdp, &scalar_gaussian(0.0, 1.0), 1, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn stderr_shrinks_like_inverse_sqrt_n() {
        let mdp = LinearBandit {
            weights: DVector::from_element(1, 1.0),
        };
        let p = scalar_gaussian(0.0, 1.0);
        // Averaged over independent seeds so the ratio is not dominated by one draw.
        let mut ratio = 0.0;
        let reps = 20;
        for seed in 0..reps {
            let small = estimate_return(&mdp, &p, 2000, &RandomStream::new(seed)).unwrap();
            let large = estimate_return(&mdp, &p, 4000, &RandomStream::new(1000 + seed)).unwrap();
            ratio += large.stderr / small.stderr;
        }
        ratio /= reps as f64;
        assert_relative_eq!(ratio, 1.0 / 2f64.sqrt(), max_relative = 0.03);
    }

    #[test]
    fn history_from_parts_validates_lengths() {
        assert!(History::from_parts(vec![0.0, 1.0], vec![DVector::zeros(1)]).is_ok());
        assert!(History::from_parts(vec![0.0], vec![DVector::zeros(1)]).is_err());
    }
}
