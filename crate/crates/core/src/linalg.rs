//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True when the symmetric part of `a` has no eigenvalue below `-rel_tol * max(trace, 1e-300)`.
pub fn is_psd(a: &Mat, rel_tol: f64) -> bool {
    let scale = a.trace().abs().max(a.amax()).max(1e-300);
    min_eigenvalue(a) >= -rel_tol * scale
}

/// Clip negative eigenvalues to zero, then symmetrize.
pub fn psd_project(a: &Mat) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(a));
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    symmetrize(&(q * Mat::from_diagonal(&clipped) * q.transpose()))
}

/// Apply `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mapped = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    q * Mat::from_diagonal(&mapped) * q.transpose()
}

/// Symmetric positive-definite solve `A X = B`; Cholesky with an LU fallback.
pub fn solve_spd(a: &Mat, b: &Mat) -> Result<Mat> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} system", a.nrows(), a.ncols())))
}

pub fn hadamard(a: &Mat, b: &Mat) -> Mat {
    a.component_mul(b)
}

pub fn diag(v: &Vector) -> Mat {
    Mat::from_diagonal(v)
}

/// Quadratic form `xᵀ A x`.
pub fn quad(a: &Mat, x: &Vector) -> f64 {
    x.dot(&(a * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_removes_negative_directions() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(min_eigenvalue(&a) < -0.9);
        let p = psd_project(&a);
        assert!(min_eigenvalue(&p) > -1e-12);
        assert!((p[(0, 1)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let a = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_fn(&a, f64::sqrt);
        assert!((&s * &s - &a).amax() < 1e-12);
    }
}
