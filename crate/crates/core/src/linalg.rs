//! Small dense helpers for covariance matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-10;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// Returns `L` with `L Lᵀ = m` for a symmetric positive-semidefinite `m`.
///
/// Singular matrices are accepted; tiny negative eigenvalues from rounding are
/// clipped to zero, larger ones are rejected.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 1 && m.ncols() == 1 {
        let v = m[(0, 0)];
        if v < 0.0 || v.is_nan() {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        return Ok(DMatrix::from_element(1, 1, v.sqrt()));
    }
    check_symmetric(m)?;
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(m.clone());
    let tol = EIGEN_TOL * eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -tol || min.is_nan() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Whether `m` is symmetric positive semidefinite up to a relative tolerance.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if check_symmetric(m).is_err() {
        return false;
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.min() >= -tol * eig.eigenvalues.amax().max(1.0)
}

/// Loewner order test `a ⪰ b`.
pub fn loewner_geq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    is_psd(&(a - b), tol)
}

/// `mean + L z` with `z ~ N(0, I)` read from `normals`.
pub fn affine_draw(mean: &DVector<f64>, factor: &DMatrix<f64>, normals: &[f64]) -> DVector<f64> {
    let z = DVector::from_column_slice(normals);
    mean + factor * z
}

pub fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::SingularCovariance)?;
    Ok(chol.solve(b))
}

/// `ln det a` for symmetric positive-definite `a`.
pub fn spd_log_det(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a.clone().cholesky().ok_or(Error::SingularCovariance)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factor_reconstructs_spd_and_singular() {
        let spd = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let l = psd_factor(&spd).unwrap();
        assert_relative_eq!(&l * l.transpose(), spd, epsilon = 1e-12);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&singular).unwrap();
        assert_relative_eq!(&l * l.transpose(), singular, epsilon = 1e-12);

        let zero = DMatrix::zeros(3, 3);
        assert!(is_zero(&psd_factor(&zero).unwrap()));
    }

    #[test]
    fn factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(psd_factor(&m), Err(Error::NotPsd { .. })));
        let m = DMatrix::from_element(1, 1, -0.5);
        assert!(matches!(psd_factor(&m), Err(Error::NotPsd { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(psd_factor(&asym), Err(Error::NotSymmetric));
    }

    #[test]
    fn loewner_order() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let b = DMatrix::identity(2, 2);
        assert!(loewner_geq(&a, &b, 1e-12));
        assert!(!loewner_geq(&b, &a, 1e-12));
    }

    #[test]
    fn log_det_and_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        assert_relative_eq!(spd_log_det(&a).unwrap(), 16f64.ln(), epsilon = 1e-12);
        let x = spd_solve(&a, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
        assert!(spd_log_det(&DMatrix::zeros(2, 2)).is_err());
    }
}
