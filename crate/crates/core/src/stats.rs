//! Sample statistics and Kolmogorov–Smirnov tests used by the verification
//! suites.

use statrs::function::erf::erfc;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor `n − 1`).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Asymptotic standard error of the sample variance, `sqrt((m4 − s⁴) / n)`.
pub fn variance_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2).max(0.0) / n).sqrt()
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * d)
}

/// One-sample test of `xs` against the continuous CDF `cdf`.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use approx::assert_relative_eq;

    #[test]
    fn moments_of_small_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&xs), 2.5);
        assert_relative_eq!(sample_variance(&xs), 5.0 / 3.0);
        assert_relative_eq!(standard_error(&xs), (5.0 / 12.0f64).sqrt());
    }

    #[test]
    fn kolmogorov_critical_values() {
        // Tabulated: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert_relative_eq!(kolmogorov_survival(1.3581), 0.05, epsilon = 1e-4);
        assert_relative_eq!(kolmogorov_survival(1.6276), 0.01, epsilon = 1e-4);
    }

    #[test]
    fn normal_cdf_values() {
        assert_relative_eq!(normal_cdf(0.0, 0.0, 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054, 0.0, 1.0), 0.975, epsilon = 1e-10);
        assert_relative_eq!(normal_cdf(3.0, 1.0, 2.0), normal_cdf(1.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn ks_accepts_matching_and_rejects_shifted() {
        let mut r = RandomStream::new(3);
        let xs: Vec<f64> = (0..5000).map(|_| r.normal()).collect();
        assert!(!ks_one_sample(&xs, |x| normal_cdf(x, 0.0, 1.0)).rejects(0.01));
        assert!(ks_one_sample(&xs, |x| normal_cdf(x, 0.2, 1.0)).rejects(0.01));

        let ys: Vec<f64> = (0..5000).map(|_| r.normal()).collect();
        assert!(!ks_two_sample(&xs, &ys).rejects(0.01));
        let zs: Vec<f64> = ys.iter().map(|y| 1.3 * y).collect();
        assert!(ks_two_sample(&xs, &zs).rejects(0.01));
    }

    #[test]
    fn variance_se_matches_gaussian_formula() {
        // For N(0, s²), se(var) ≈ s² sqrt(2/n).
        let mut r = RandomStream::new(5);
        let xs: Vec<f64> = (0..200_000).map(|_| 2.0 * r.normal()).collect();
        assert_relative_eq!(variance_standard_error(&xs), 4.0 * (2.0 / 200_000f64).sqrt(), max_relative = 0.05);
    }
}
