//! Dense linear algebra for the small matrices used by the AR emission model
//! (channel and lag dimensions are tiny, so hand-rolled Cholesky is enough).

use ndarray::{Array1, Array2, ArrayView2};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "matrix not positive definite (pivot {s:.3e} at {i})"
                    )));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// log|A| for symmetric positive definite A, via Cholesky.
pub fn logdet_spd(a: &ArrayView2<f64>) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..a.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>())
}

/// Solve L x = b for lower-triangular L.
pub fn solve_lower(l: &ArrayView2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = x[k];
            x[i] -= l[[i, k]] * t;
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Solve A X = B for SPD A (B given column-wise), via Cholesky.
pub fn solve_spd(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(a)?;
    let n = a.nrows();
    let m = b.ncols();
    let mut x = b.to_owned();
    // forward substitution L y = b
    for c in 0..m {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        // back substitution Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

/// Inverse of an SPD matrix.
pub fn inv_spd(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let eye = Array2::<f64>::eye(n);
    solve_spd(a, &eye.view())
}

/// Multivariate log-gamma Γ_d(a).
pub fn ln_multigamma(d: usize, a: f64) -> f64 {
    let mut s = 0.25 * (d * (d - 1)) as f64 * std::f64::consts::PI.ln();
    for j in 0..d {
        s += ln_gamma(a - 0.5 * j as f64);
    }
    s
}

/// ln Γ re-export so callers do not need statrs directly.
pub fn lgamma(x: f64) -> f64 {
    ln_gamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a.view()).unwrap();
        let rec = l.dot(&l.t());
        for (x, y) in a.iter().zip(rec.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_solve_matches_direct() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let b = array![[1.0], [2.0]];
        let x = solve_spd(&a.view(), &b.view()).unwrap();
        let back = a.dot(&x);
        assert!((back[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((back[[1, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn logdet_of_identity_is_zero() {
        let a = Array2::<f64>::eye(3);
        assert!(logdet_spd(&a.view()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn multigamma_reduces_to_gamma() {
        assert!((ln_multigamma(1, 3.5) - lgamma(3.5)).abs() < 1e-12);
    }

    #[test]
    fn non_spd_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a.view()).is_err());
    }
}
