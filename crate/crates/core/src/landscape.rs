//! Return landscapes of the K-controller on a θ-grid, and the basin oracle
//! built on them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hillcar::HillCarMdp;
use crate::mdp::estimate_return;
use crate::policy::KController;
use crate::rng::RandomStream;

/// Monte-Carlo returns over an increasing θ-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub thetas: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinLabel {
    Global,
    Local,
}

impl BasinLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BasinLabel::Global => "global",
            BasinLabel::Local => "local",
        }
    }
}

impl Landscape {
    /// Indices strictly greater than every existing neighbour; the endpoints
    /// count when they beat their single neighbour.
    pub fn local_maxima(&self) -> Vec<usize> {
        let m = &self.means;
        (0..m.len())
            .filter(|&i| (i == 0 || m[i] > m[i - 1]) && (i + 1 == m.len() || m[i] > m[i + 1]))
            .collect()
    }

    pub fn argmax(&self) -> usize {
        self.means
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > self.means[best] { i } else { best })
    }

    pub fn nearest_index(&self, theta: f64) -> usize {
        self.thetas
            .iter()
            .enumerate()
            .fold(0, |best, (i, t)| {
                if (t - theta).abs() < (self.thetas[best] - theta).abs() {
                    i
                } else {
                    best
                }
            })
    }

    /// The grid maximum reached from `theta` by steepest ascent between
    /// neighbouring grid points.
    pub fn ascend_from(&self, theta: f64) -> usize {
        let m = &self.means;
        let mut i = self.nearest_index(theta);
        loop {
            let left = (i > 0 && m[i - 1] > m[i]).then(|| i - 1);
            let right = (i + 1 < m.len() && m[i + 1] > m[i]).then(|| i + 1);
            i = match (left, right) {
                (Some(l), Some(r)) => {
                    if m[r] > m[l] {
                        r
                    } else {
                        l
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => return i,
            };
        }
    }

    /// Global if ascent from `theta` ends at the grid's best point.
    pub fn basin_label(&self, theta: f64) -> BasinLabel {
        if self.ascend_from(theta) == self.argmax() {
            BasinLabel::Global
        } else {
            BasinLabel::Local
        }
    }
}

/// `n` evenly spaced points from `lo` to `hi` with spacing `pitch`; the last
/// point is `hi` when `(hi − lo)/pitch` is integral up to rounding.
pub fn theta_grid(lo: f64, hi: f64, pitch: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi && pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] with pitch {pitch}")));
    }
    let count = ((hi - lo) / pitch + 1e-9).floor() as usize + 1;
    // Rounding keeps values like -2.35 from printing as -2.3499999999999996.
    Ok((0..count).map(|i| ((lo + i as f64 * pitch) * 1e12).round() / 1e12).collect())
}

/// Return of the K-controller with action noise `sigma_prime` at each θ,
/// every point evaluated on the same stream so that neighbouring points
/// share their noise. `sigma_prime = 0` is the deterministic controller.
pub fn k_controller_landscape(
    mdp: &HillCarMdp,
    thetas: &[f64],
    sigma_prime: f64,
    n: usize,
    rng: &RandomStream,
) -> Result<Landscape> {
    if !(sigma_prime.is_finite() && sigma_prime >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_prime must be >= 0, got {sigma_prime}")));
    }
    let x_target = mdp.profile.x_target();
    let mut means = Vec::with_capacity(thetas.len());
    let mut stderrs = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let k = KController::new(theta, x_target, sigma_prime);
        let est = if sigma_prime == 0.0 {
            estimate_return(mdp, &k.deterministic(), n, rng)?
        } else {
            estimate_return(mdp, &k.gaussian(), n, rng)?
        };
        means.push(est.mean);
        stderrs.push(est.stderr);
    }
    Ok(Landscape {
        thetas: thetas.to_vec(),
        means,
        stderrs,
        n,
    })
}

/// Basin label of a one-dimensional parameter vector.
pub fn label_theta(landscape: &Landscape, theta: &DVector<f64>) -> BasinLabel {
    landscape.basin_label(theta[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn land(means: Vec<f64>) -> Landscape {
        Landscape {
            thetas: (0..means.len()).map(|i| i as f64).collect(),
            stderrs: vec![0.0; means.len()],
            means,
            n: 1,
        }
    }

    #[test]
    fn strict_maxima_with_endpoints() {
        assert_eq!(land(vec![3.0, 1.0, 2.0, 0.0, 5.0]).local_maxima(), vec![0, 2, 4]);
        assert_eq!(land(vec![1.0, 2.0, 2.0, 1.0]).local_maxima(), Vec::<usize>::new());
        assert_eq!(land(vec![1.0, 2.0, 3.0]).local_maxima(), vec![2]);
    }

    #[test]
    fn basins_by_ascent() {
        let l = land(vec![0.0, 4.0, 1.0, 2.0, 3.0, 2.5]);
        assert_eq!(l.argmax(), 1);
        assert_eq!(l.basin_label(0.0), BasinLabel::Global);
        assert_eq!(l.basin_label(2.0), BasinLabel::Global);
        assert_eq!(l.basin_label(2.6), BasinLabel::Local);
        assert_eq!(l.basin_label(5.0), BasinLabel::Local);
        assert_eq!(l.ascend_from(3.2), 4);
        assert_eq!(l.basin_label(-7.0), BasinLabel::Global);
    }

    #[test]
    fn grid_endpoints() {
        let g = theta_grid(-10.0, 2.0, 0.05).unwrap();
        assert_eq!(g.len(), 241);
        assert!((g[240] - 2.0).abs() < 1e-9);
        assert!(theta_grid(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn deterministic_landscape_is_bimodal() {
        let mdp = HillCarMdp::default();
        let grid = theta_grid(-4.0, 1.0, 0.1).unwrap();
        let l = k_controller_landscape(&mdp, &grid, 0.0, 200, &RandomStream::new(0)).unwrap();
        let maxima = l.local_maxima();
        assert!(maxima.len() >= 2, "{maxima:?}");
        assert_eq!(l.basin_label(1.0), BasinLabel::Local);
        assert_eq!(l.basin_label(-2.0), BasinLabel::Global);
    }
}
