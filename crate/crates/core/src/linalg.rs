//! Small dense linear-algebra helpers shared by the geometry and GP code.

use nalgebra::{DMatrix, Dim, Matrix, OMatrix, RawStorage, SymmetricEigen, DefaultAllocator};
use nalgebra::allocator::Allocator;

use crate::error::{Error, Result};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize<D: Dim>(a: &OMatrix<f64, D, D>) -> OMatrix<f64, D, D>
where
    DefaultAllocator: Allocator<D, D>,
{
    (a + a.transpose()) * 0.5
}

fn max_abs<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(a: &Matrix<f64, R, C, S>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Checks symmetry within `sym_tol` and eigenvalues >= `-eig_tol`. Both
/// tolerances are scaled by `max(1, max|a_ij|)`.
pub fn check_psd(a: &DMatrix<f64>, sym_tol: f64, eig_tol: f64, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidCovariance(format!("{what} is not square")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance(format!("{what} has non-finite entries")));
    }
    let scale = max_abs(a).max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > sym_tol * scale {
                return Err(Error::InvalidCovariance(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if n == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let min = eig.eigenvalues.min();
    if min < -eig_tol * scale {
        return Err(Error::InvalidCovariance(format!(
            "{what} is indefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Cholesky factorization that tolerates positive *semi*-definite input.
///
/// Pivots in `[-tol, tol]` (relative to the largest diagonal entry) produce a
/// zero column, so `C Cᵀ` reproduces singular covariances such as ones with
/// all-zero blocks. Returns `None` on a clearly negative pivot.
pub fn semidefinite_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let diag_max = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = 1e-13 * diag_max.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if d < -tol {
            return None;
        }
    }
    Some(l)
}

/// `log |A|` from a lower Cholesky factor of `A`.
pub fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of a lower-triangular matrix with nonzero diagonal, column by
/// column with contiguous axpy updates.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j..].fill(0.0);
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / l[(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                let col = &l.as_slice()[k * n + k + 1..(k + 1) * n];
                for (xi, lik) in x[k + 1..].iter_mut().zip(col) {
                    *xi -= xk * lik;
                }
            }
        }
        inv.as_mut_slice()[j * n + j..(j + 1) * n].copy_from_slice(&x[j..]);
    }
    inv
}

/// `(L Lᵀ)⁻¹` from the lower Cholesky factor, symmetric by construction.
pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let li = lower_triangular_inverse(l);
    let k = li.transpose() * &li;
    symmetrize(&k)
}
