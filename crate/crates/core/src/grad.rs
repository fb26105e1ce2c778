//! Gradient estimators: score-function (REINFORCE) for stochastic policies and
//! central finite differences for any Monte-Carlo objective.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout_inspect, Mdp, ReturnEstimate};
use crate::par::map_streams;
use crate::policy::{ParamVector, ScorePolicy};
use crate::rng::RandomStream;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub vector: DVector<f64>,
    pub stderr_per_coord: DVector<f64>,
    pub n_samples: usize,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        self.vector.norm()
    }

    fn from_rows(rows: &[DVector<f64>], dim: usize) -> Self {
        let n = rows.len();
        let mut vector = DVector::zeros(dim);
        let mut stderr = DVector::zeros(dim);
        let mut column = vec![0.0; n];
        for j in 0..dim {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[j];
            }
            vector[j] = stats::mean(&column);
            stderr[j] = if n > 1 { stats::standard_error(&column) } else { 0.0 };
        }
        Self {
            vector,
            stderr_per_coord: stderr,
            n_samples: n,
        }
    }
}

/// Control variate subtracted from each return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Baseline {
    None,
    Constant(f64),
    /// Mean return of the other rollouts in the batch. Leaving the rollout
    /// itself out keeps the estimate unbiased.
    #[default]
    BatchMean,
}

/// `(1/n) Σ_i (Σ_t ∇_θ ln π_θ(a_t | h_t)) (G_i − b)`.
pub fn score_function_gradient<M, P>(
    mdp: &M,
    policy: &P,
    n: usize,
    baseline: Baseline,
    rng: &RandomStream,
) -> Result<GradientEstimate>
where
    M: Mdp,
    P: ScorePolicy<M::State>,
{
    score_function_gradient_with_return(mdp, policy, n, baseline, rng).map(|(g, _)| g)
}

/// [`score_function_gradient`] together with the return estimate of the same
/// rollouts.
pub fn score_function_gradient_with_return<M, P>(
    mdp: &M,
    policy: &P,
    n: usize,
    baseline: Baseline,
    rng: &RandomStream,
) -> Result<(GradientEstimate, ReturnEstimate)>
where
    M: Mdp,
    P: ScorePolicy<M::State>,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rollouts, got {n}")));
    }
    let dim = policy.param_dim();
    let discount = mdp.discount();
    let per_rollout: Vec<Result<(DVector<f64>, f64)>> = map_streams(rng, n, |stream| {
        let mut score = DVector::zeros(dim);
        let traj = rollout_inspect(mdp, policy, &stream, |h, a| {
            score += policy.score(h, a)?;
            Ok(())
        })?;
        Ok((score, traj.discounted_return(discount)))
    });
    let per_rollout: Vec<(DVector<f64>, f64)> = per_rollout.into_iter().collect::<Result<_>>()?;
    let returns: Vec<f64> = per_rollout.iter().map(|(_, g)| *g).collect();
    let total: f64 = returns.iter().sum();
    let rows: Vec<DVector<f64>> = per_rollout
        .iter()
        .map(|(score, g)| {
            let b = match baseline {
                Baseline::None => 0.0,
                Baseline::Constant(b) => b,
                Baseline::BatchMean => (total - g) / (n - 1) as f64,
            };
            score * (g - b)
        })
        .collect();
    Ok((GradientEstimate::from_rows(&rows, dim), ReturnEstimate::from_samples(returns)))
}

/// Central differences with step `eps (|θ_i| + 1)` per coordinate, evaluating
/// both sides on the same stream.
///
/// When both sides report per-rollout samples of equal length the standard
/// error comes from the paired differences, which is what common random
/// numbers buy; otherwise the sides are treated as independent.
pub fn finite_difference_gradient<F>(
    objective: F,
    theta: &ParamVector,
    eps: f64,
    rng: &RandomStream,
) -> Result<GradientEstimate>
where
    F: Fn(&ParamVector, &RandomStream) -> Result<ReturnEstimate>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let dim = theta.len();
    let mut vector = DVector::zeros(dim);
    let mut stderr = DVector::zeros(dim);
    let mut n_samples = 0;
    for i in 0..dim {
        let h = eps * (theta[i].abs() + 1.0);
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += h;
        down[i] -= h;
        let f_up = objective(&up, rng)?;
        let f_down = objective(&down, rng)?;
        vector[i] = (f_up.mean - f_down.mean) / (2.0 * h);
        stderr[i] = if f_up.samples.len() == f_down.samples.len() && f_up.samples.len() > 1 {
            let diffs: Vec<f64> = f_up.samples.iter().zip(&f_down.samples).map(|(a, b)| a - b).collect();
            stats::standard_error(&diffs) / (2.0 * h)
        } else {
            f_up.combined_stderr(&f_down) / (2.0 * h)
        };
        n_samples = f_up.n_samples.max(f_down.n_samples);
    }
    Ok(GradientEstimate {
        vector,
        stderr_per_coord: stderr,
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::toy::{ConstantRewardMdp, LinearBandit};
    use crate::policy::{AffineMean, GaussianAffinePolicy, KController, StateCovariance};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn bandit_policy(theta: f64) -> GaussianAffinePolicy<f64> {
        GaussianAffinePolicy::new(
            AffineMean::new(1, 1, |_: &f64| DMatrix::from_element(1, 1, 1.0)),
            StateCovariance::Constant(DMatrix::from_element(1, 1, 1.0)),
            DVector::from_element(1, theta),
        )
    }

    fn bandit() -> LinearBandit {
        LinearBandit {
            weights: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn linear_bandit_gradient_is_one() {
        for baseline in [Baseline::None, Baseline::Constant(0.7), Baseline::BatchMean] {
            let g = score_function_gradient(&bandit(), &bandit_policy(0.3), 20_000, baseline, &RandomStream::new(1)).unwrap();
            assert!((g.vector[0] - 1.0).abs() < 3.0 * g.stderr_per_coord[0], "{baseline:?}: {g:?}");
        }
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let mdp = ConstantRewardMdp {
            value: 0.0,
            discount: 0.9,
            horizon: 5,
            action_dim: 1,
        };
        let g = score_function_gradient(&mdp, &bandit_policy(0.0), 100, Baseline::None, &RandomStream::new(0)).unwrap();
        assert_eq!(g.vector[0], 0.0);
    }

    #[test]
    fn theta_independent_objective_has_zero_mean_gradient() {
        let mdp = ConstantRewardMdp {
            value: 2.0,
            discount: 0.9,
            horizon: 5,
            action_dim: 1,
        };
        let g = score_function_gradient(&mdp, &bandit_policy(0.0), 20_000, Baseline::None, &RandomStream::new(4)).unwrap();
        assert!(g.vector[0].abs() < 3.0 * g.stderr_per_coord[0]);
    }

    #[test]
    fn batch_mean_baseline_reduces_variance() {
        let policy = bandit_policy(5.0);
        let rng = RandomStream::new(6);
        let plain = score_function_gradient(&bandit(), &policy, 20_000, Baseline::None, &rng).unwrap();
        let based = score_function_gradient(&bandit(), &policy, 20_000, Baseline::BatchMean, &rng).unwrap();
        assert!(based.stderr_per_coord[0] <= plain.stderr_per_coord[0]);
        let se = plain.stderr_per_coord[0].hypot(based.stderr_per_coord[0]);
        assert!((plain.vector[0] - based.vector[0]).abs() < 3.0 * se);
    }

    #[test]
    fn deterministic_policy_is_rejected() {
        let policy = KController::new(1.0, 2.0, 0.0).gaussian();
        let mdp = crate::hillcar::HillCarMdp::default();
        assert_eq!(
            score_function_gradient(&mdp, &policy, 4, Baseline::None, &RandomStream::new(0)),
            Err(Error::Deterministic)
        );
    }

    #[test]
    fn quadratic_finite_difference() {
        let f = |t: &ParamVector, _: &RandomStream| Ok(ReturnEstimate::exact(-t[0] * t[0]));
        let g = finite_difference_gradient(f, &DVector::from_element(1, 1.0), 1e-3, &RandomStream::new(0)).unwrap();
        assert_relative_eq!(g.vector[0], -2.0, epsilon = 1e-9);
        let g2 = finite_difference_gradient(f, &DVector::from_element(1, 1.0), 1e-3, &RandomStream::new(99)).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn multivariate_finite_difference() {
        let f = |t: &ParamVector, _: &RandomStream| Ok(ReturnEstimate::exact(t[0] * t[1] + t[1].powi(3)));
        let theta = DVector::from_vec(vec![2.0, -1.0]);
        let g = finite_difference_gradient(f, &theta, 1e-4, &RandomStream::new(0)).unwrap();
        assert_relative_eq!(g.vector[0], -1.0, epsilon = 1e-7);
        assert_relative_eq!(g.vector[1], 5.0, epsilon = 1e-6);
    }

    #[test]
    fn finite_difference_of_noisy_bandit() {
        let f = |t: &ParamVector, rng: &RandomStream| crate::mdp::estimate_return(&bandit(), &bandit_policy(t[0]), 1_000, rng);
        let g = finite_difference_gradient(f, &DVector::from_element(1, 0.5), 1e-3, &RandomStream::new(2)).unwrap();
        // Common random numbers cancel the noise exactly on a linear reward.
        assert_relative_eq!(g.vector[0], 1.0, epsilon = 1e-8);
    }
}
