//! Small dense-matrix helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Symmetric (to a relative 1e-12) and Cholesky-factorizable.
pub fn is_spd(m: &Matrix) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1e-300);
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    m.clone().cholesky().is_some()
}

pub fn require_spd(m: &Matrix, what: &'static str) -> Result<()> {
    if is_spd(m) {
        Ok(())
    } else {
        Err(Error::NotSpd(what))
    }
}

pub fn spd_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    let chol = m.clone().cholesky().ok_or(Error::NotSpd(what))?;
    let inv = chol.inverse();
    // symmetrize away rounding
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
pub fn spd_sqrt(m: &Matrix) -> Matrix {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    let v = &eig.eigenvectors;
    let s = v * Matrix::from_diagonal(&roots) * v.transpose();
    (&s + s.transpose()) * 0.5
}

/// Spectral condition number `σ_max / σ_min`.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(values))
}

/// `m · v` for a plain slice.
pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidSpec("matrix must be square and non-empty".into()));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = spd_sqrt(&m);
        let back = &s * &s;
        for (a, b) in back.iter().zip(m.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert!(is_spd(&s));
    }

    #[test]
    fn spd_detection() {
        assert!(is_spd(&diag(&[0.7, 1.3])));
        assert!(!is_spd(&diag(&[0.7, -1.3])));
        assert!(!is_spd(&Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])));
        assert_relative_eq!(condition_number(&diag(&[2.0, 0.5])), 4.0, epsilon = 1e-12);
    }
}
