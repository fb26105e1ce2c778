//! Car moving in a one-dimensional valley.
//!
//! The valley is a polynomial `h`; the car follows
//!
//! ```text
//! ẋ = v
//! v̇ = a / (m (1 + h′²)) − g h′ / (1 + h′²) − v² h′ h″ / (1 + h′²) − e v |v|
//! ```
//!
//! integrated with explicit Euler substeps over `Δ`, with the noisy force
//! clamped to `[a_m, a_M]` and the position clamped to `[x_m, x_M]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::continuation::Positioned;
use crate::error::{Error, Result};
use crate::mdp::{Action, Mdp};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub v: f64,
}

impl Positioned for CarState {
    fn position(&self) -> f64 {
        self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarParams {
    pub mass: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
    pub action_min: f64,
    pub action_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub x_initial: f64,
    pub noise_std: f64,
    pub euler_substeps: usize,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            gravity: 9.81,
            damping: 0.65,
            dt: 0.1,
            action_min: -10.0,
            action_max: 10.0,
            x_min: -4.0,
            x_max: 5.0,
            x_initial: -3.0,
            noise_std: 1.0,
            euler_substeps: 1,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("dt", self.dt),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.damping >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("damping and noise_std must be nonnegative".into()));
        }
        if !(self.action_min < self.action_max) || !(self.x_min < self.x_max) {
            return Err(Error::InvalidArgument("bounds must be ordered".into()));
        }
        if !(self.x_min..=self.x_max).contains(&self.x_initial) {
            return Err(Error::InvalidArgument("x_initial lies outside the position bounds".into()));
        }
        if self.euler_substeps == 0 {
            return Err(Error::InvalidArgument("euler_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

const PROFILE_GRID: usize = 9001;

/// Polynomial valley with two floors separated by one peak.
#[derive(Debug, Clone, PartialEq)]
pub struct HillProfile {
    /// Ascending powers: `h(x) = Σ c_k x^k`.
    coefficients: Vec<f64>,
    x_min: f64,
    x_max: f64,
    x_local: f64,
    x_peak: f64,
    x_target: f64,
    h_range: (f64, f64),
}

impl HillProfile {
    /// `scale · (x+3)² (x−2)² − tilt · x`.
    pub fn double_well(scale: f64, tilt: f64) -> Result<Self> {
        // (x+3)(x−2) = x² + x − 6, squared: x⁴ + 2x³ − 11x² − 12x + 36.
        let coefficients = vec![36.0 * scale, -12.0 * scale - tilt, -11.0 * scale, 2.0 * scale, scale];
        Self::from_coefficients(coefficients, -4.0, 5.0)
    }

    /// Builds and validates a profile on `[x_min, x_max]`.
    ///
    /// `h` must have exactly two strict interior local minima with exactly one
    /// strict local maximum between them, and the right-hand minimum must be
    /// the global minimizer on the interval.
    pub fn from_coefficients(coefficients: Vec<f64>, x_min: f64, x_max: f64) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidProfile("coefficients must be finite and non-empty".into()));
        }
        if !(x_min < x_max) {
            return Err(Error::InvalidProfile("empty position interval".into()));
        }
        let mut profile = Self {
            coefficients,
            x_min,
            x_max,
            x_local: f64::NAN,
            x_peak: f64::NAN,
            x_target: f64::NAN,
            h_range: (0.0, 0.0),
        };

        let step = (x_max - x_min) / (PROFILE_GRID - 1) as f64;
        let grid: Vec<f64> = (0..PROFILE_GRID).map(|i| x_min + i as f64 * step).collect();
        let slopes: Vec<f64> = grid.iter().map(|&x| profile.eval(x).1).collect();
        let mut minima = Vec::new();
        let mut maxima = Vec::new();
        for i in 1..PROFILE_GRID {
            let (a, b) = (slopes[i - 1], slopes[i]);
            if a < 0.0 && b >= 0.0 {
                minima.push(refine_root(&profile, grid[i - 1], grid[i]));
            } else if a > 0.0 && b <= 0.0 {
                maxima.push(refine_root(&profile, grid[i - 1], grid[i]));
            }
        }
        let interior = |x: &f64| *x > x_min + step && *x < x_max - step;
        minima.retain(interior);
        maxima.retain(interior);
        if minima.len() != 2 || maxima.len() != 1 || !(minima[0] < maxima[0] && maxima[0] < minima[1]) {
            return Err(Error::InvalidProfile(format!(
                "expected two minima around one peak, found minima {minima:?} and maxima {maxima:?}"
            )));
        }

        let values: Vec<f64> = grid.iter().map(|&x| profile.h(x)).collect();
        let best = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(PROFILE_GRID - 1)];
        let x_target = golden_section_min(|x| profile.h(x), lo, hi, 1e-8);
        if (x_target - minima[1]).abs() > 1e-4 {
            return Err(Error::InvalidProfile(format!(
                "global minimizer {x_target} is not the right-hand floor {}",
                minima[1]
            )));
        }
        let lowest = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let highest = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        profile.x_local = minima[0];
        profile.x_peak = maxima[0];
        profile.x_target = x_target;
        profile.h_range = (lowest.min(profile.h(x_target)), highest);
        Ok(profile)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// `(h, h′, h″)` at `x`, by Horner's scheme.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (mut h, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for &c in self.coefficients.iter().rev() {
            d2 = d2 * x + 2.0 * d1;
            d1 = d1 * x + h;
            h = h * x + c;
        }
        (h, d1, d2)
    }

    pub fn h(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Global minimizer of `h` on the position interval.
    pub fn x_target(&self) -> f64 {
        self.x_target
    }

    /// The suboptimal floor.
    pub fn x_local(&self) -> f64 {
        self.x_local
    }

    pub fn x_peak(&self) -> f64 {
        self.x_peak
    }

    /// `(min h, max h)` over the position interval.
    pub fn h_range(&self) -> (f64, f64) {
        self.h_range
    }
}

impl Default for HillProfile {
    fn default() -> Self {
        Self::double_well(0.02, 0.1).expect("default profile is valid")
    }
}

fn refine_root(profile: &HillProfile, mut lo: f64, mut hi: f64) -> f64 {
    let slope = |x: f64| profile.eval(x).1;
    let lo_sign = slope(lo).signum();
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if slope(mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Acceleration `v̇` for a constant (already clamped) force.
pub fn acceleration(x: f64, v: f64, force: f64, params: &CarParams, profile: &HillProfile) -> f64 {
    let (_, d1, d2) = profile.eval(x);
    let denom = 1.0 + d1 * d1;
    force / (params.mass * denom) - params.gravity * d1 / denom - v * v * d1 * d2 / denom
        - params.damping * v * v.abs()
}

/// Mechanical energy `½ m v² (1 + h′²) + m g h`.
pub fn energy(state: &CarState, params: &CarParams, profile: &HillProfile) -> f64 {
    let (h, d1, _) = profile.eval(state.x);
    0.5 * params.mass * state.v * state.v * (1.0 + d1 * d1) + params.mass * params.gravity * h
}

/// One transition of length `Δ`. Draws exactly one normal from `rng`.
pub fn step(state: &CarState, action: f64, params: &CarParams, profile: &HillProfile, rng: &mut RandomStream) -> CarState {
    let noise = rng.normal() * params.noise_std;
    let force = (action + noise).clamp(params.action_min, params.action_max);
    let h = params.dt / params.euler_substeps as f64;
    let (mut x, mut v) = (state.x, state.v);
    for _ in 0..params.euler_substeps {
        let acc = acceleration(x, v, force, params, profile);
        x = (x + h * v).clamp(params.x_min, params.x_max);
        v += h * acc;
    }
    CarState { x, v }
}

#[derive(Debug, Clone)]
pub struct HillCarMdp {
    pub params: CarParams,
    pub profile: HillProfile,
    pub discount: f64,
    pub horizon: usize,
}

/// Hill-car MDP with reward `−h(x)`, `γ = 0.99` and `T = 100`.
pub fn make_hillcar_mdp(params: CarParams, profile: HillProfile) -> Result<HillCarMdp> {
    params.validate()?;
    Ok(HillCarMdp {
        params,
        profile,
        discount: 0.99,
        horizon: 100,
    })
}

impl Default for HillCarMdp {
    fn default() -> Self {
        make_hillcar_mdp(CarParams::default(), HillProfile::default()).expect("defaults are valid")
    }
}

impl Mdp for HillCarMdp {
    type State = CarState;

    fn action_dim(&self) -> usize {
        1
    }

    fn initial_state(&self, _rng: &mut RandomStream) -> CarState {
        CarState {
            x: self.params.x_initial,
            v: 0.0,
        }
    }

    fn transition(&self, state: &CarState, action: &Action, rng: &mut RandomStream) -> CarState {
        step(state, action[0], &self.params, &self.profile, rng)
    }

    fn reward(&self, state: &CarState, _action: &Action) -> f64 {
        -self.profile.h(state.x)
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reward_bound(&self) -> f64 {
        let (lo, hi) = self.profile.h_range();
        lo.abs().max(hi.abs())
    }
}

/// Convenience for scalar actions.
pub fn scalar_action(a: f64) -> Action {
    DVector::from_element(1, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{estimate_return, rollout};
    use crate::policy::KController;
    use approx::assert_relative_eq;

    // Independent scalar evaluation of the default valley and its derivatives.
    fn h_ref(x: f64) -> f64 {
        0.02 * (x + 3.0).powi(2) * (x - 2.0).powi(2) - 0.1 * x
    }
    fn dh_ref(x: f64) -> f64 {
        0.02 * (2.0 * (x + 3.0) * (x - 2.0).powi(2) + 2.0 * (x + 3.0).powi(2) * (x - 2.0)) - 0.1
    }

    fn quiet() -> CarParams {
        CarParams {
            noise_std: 0.0,
            ..CarParams::default()
        }
    }

    #[test]
    fn default_profile_matches_closed_form() {
        let p = HillProfile::default();
        for i in 0..=90 {
            let x = -4.0 + 0.1 * i as f64;
            let (h, d1, _) = p.eval(x);
            assert_relative_eq!(h, h_ref(x), epsilon = 1e-12);
            assert_relative_eq!(d1, dh_ref(x), epsilon = 1e-12);
        }
        assert_relative_eq!(p.eval(-3.0).1, -0.1, epsilon = 1e-14);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let p = HillProfile::default();
        let eps = 1e-5;
        for i in 0..=180 {
            let x = -4.0 + 0.05 * i as f64;
            let (_, d1, d2) = p.eval(x);
            let fd1 = (p.h(x + eps) - p.h(x - eps)) / (2.0 * eps);
            let fd2 = (p.eval(x + eps).1 - p.eval(x - eps).1) / (2.0 * eps);
            assert!((d1 - fd1).abs() < 1e-6, "h' at {x}");
            assert!((d2 - fd2).abs() < 1e-6, "h'' at {x}");
        }
    }

    #[test]
    fn target_is_interior_minimum() {
        let p = HillProfile::default();
        let xt = p.x_target();
        let (_, d1, d2) = p.eval(xt);
        assert!(d1.abs() < 1e-7);
        assert!(d2 > 0.0);
        assert!(xt > 0.0);
        assert!(p.x_local() < p.x_peak() && p.x_peak() < xt);
        assert!((p.x_local() + 3.0).abs() < 0.5);
        // Brute-force check of the global minimum.
        let brute = (0..=900_000)
            .map(|i| -4.0 + i as f64 * 1e-5)
            .min_by(|a, b| h_ref(*a).total_cmp(&h_ref(*b)))
            .unwrap();
        assert!((brute - xt).abs() < 1e-4);
    }

    #[test]
    fn rejects_single_well() {
        let err = HillProfile::from_coefficients(vec![0.0, 0.0, 1.0], -4.0, 5.0);
        assert!(matches!(err, Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn rejects_left_global_minimum() {
        // Tilted the other way: the left floor becomes the global one.
        assert!(HillProfile::double_well(0.02, -0.3).is_err());
    }

    #[test]
    fn force_is_clamped() {
        let p = HillProfile::default();
        let params = quiet();
        let s = CarState { x: -1.0, v: 0.5 };
        let a = step(&s, 100.0, &params, &p, &mut RandomStream::new(0));
        let b = step(&s, 10.0, &params, &p, &mut RandomStream::new(0));
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_from_rest() {
        let p = HillProfile::default();
        let s = step(&CarState { x: -3.0, v: 0.0 }, 0.0, &quiet(), &p, &mut RandomStream::new(0));
        let d = dh_ref(-3.0);
        let expected_v = 0.1 * (-9.81 * d / (1.0 + d * d));
        assert_eq!(s.x, -3.0);
        assert_relative_eq!(s.v, expected_v, epsilon = 1e-14);
        assert_relative_eq!(s.v, 0.097_128_712_871_287_13, epsilon = 1e-12);
    }

    #[test]
    fn position_clamped_at_walls() {
        let p = HillProfile::default();
        let s = step(&CarState { x: 5.0, v: 3.0 }, 10.0, &quiet(), &p, &mut RandomStream::new(1));
        assert_eq!(s.x, 5.0);
        let s = step(&CarState { x: -4.0, v: -3.0 }, -10.0, &quiet(), &p, &mut RandomStream::new(1));
        assert_eq!(s.x, -4.0);
    }

    #[test]
    fn noise_off_step_is_pure() {
        let p = HillProfile::default();
        let s = CarState { x: 0.3, v: -1.2 };
        let a = step(&s, 2.0, &quiet(), &p, &mut RandomStream::new(1));
        let b = step(&s, 2.0, &quiet(), &p, &mut RandomStream::new(999));
        assert_eq!(a, b);
    }

    #[test]
    fn energy_drift_shrinks_with_substeps() {
        let p = HillProfile::default();
        let drift = |substeps: usize| {
            let params = CarParams {
                noise_std: 0.0,
                damping: 0.0,
                euler_substeps: substeps,
                ..CarParams::default()
            };
            let mut s = CarState { x: 1.0, v: 0.5 };
            let e0 = energy(&s, &params, &p);
            let mut rng = RandomStream::new(0);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                s = step(&s, 0.0, &params, &p, &mut rng);
                assert!(s.x > -4.0 && s.x < 5.0, "clamp must stay inactive");
                worst = worst.max((energy(&s, &params, &p) - e0).abs());
            }
            worst
        };
        let d1 = drift(1);
        let d4 = drift(4);
        let d16 = drift(16);
        assert!(d4 < d1 && d16 < d4, "{d1} {d4} {d16}");
        // First-order method: refining by 4 cuts the error by roughly 4.
        assert!(d16 < d1 / 8.0);
    }

    #[test]
    fn reward_range_and_ordering() {
        let mdp = HillCarMdp::default();
        let p = &mdp.profile;
        let xt = p.x_target();
        let a = scalar_action(0.0);
        let r_target = mdp.reward(&CarState { x: xt, v: 0.0 }, &a);
        let r_initial = mdp.reward(&CarState { x: -3.0, v: 0.0 }, &a);
        assert!(r_target > r_initial);
        let (lo, hi) = p.h_range();
        for i in 0..=900 {
            let x = -4.0 + 0.01 * i as f64;
            let r = mdp.reward(&CarState { x, v: 0.0 }, &a);
            assert!(r >= -hi - 1e-12 && r <= -lo + 1e-12);
        }
    }

    #[test]
    fn mdp_wiring() {
        let mdp = HillCarMdp::default();
        assert_eq!(mdp.discount(), 0.99);
        assert_eq!(mdp.horizon(), 100);
        let mut rng = RandomStream::new(5);
        for _ in 0..10 {
            assert_eq!(mdp.initial_state(&mut rng), CarState { x: -3.0, v: 0.0 });
        }
    }

    #[test]
    fn first_transition_with_zero_policy() {
        let mdp = make_hillcar_mdp(quiet(), HillProfile::default()).unwrap();
        let k = KController::new(0.0, mdp.profile.x_target(), 0.0);
        let t = rollout(&mdp, &k.deterministic(), &RandomStream::new(0)).unwrap();
        let s1 = t.history.states()[1];
        let d = dh_ref(-3.0);
        assert_eq!(s1.x, -3.0);
        assert_relative_eq!(s1.v, 0.1 * (-9.81 * d / (1.0 + d * d)), epsilon = 1e-14);
    }

    #[test]
    fn states_stay_in_bounds() {
        let mdp = HillCarMdp::default();
        for theta in [-10.0, -3.0, -0.5, 0.0, 2.0] {
            let k = KController::new(theta, mdp.profile.x_target(), 2.0);
            for seed in 0..20 {
                let t = rollout(&mdp, &k.gaussian(), &RandomStream::new(seed)).unwrap();
                assert!(t.history.states().iter().all(|s| (-4.0..=5.0).contains(&s.x) && s.v.is_finite()));
            }
        }
    }

    #[test]
    fn returns_are_finite_across_parameter_range() {
        let mdp = HillCarMdp::default();
        for theta in [-10.0, -5.0, 0.0, 2.0] {
            let k = KController::new(theta, mdp.profile.x_target(), 4.0);
            let est = estimate_return(&mdp, &k.gaussian(), 200, &RandomStream::new(3)).unwrap();
            assert!(est.mean.is_finite());
            assert!(est.mean.abs() <= mdp.reward_bound() / (1.0 - 0.99));
        }
    }
}
