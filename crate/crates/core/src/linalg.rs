//! Small dense numerics for symmetric matrices.
//!
//! Everything downstream works with symmetric matrices of modest size
//! (the impulse-response length, typically 50), so the factorizations are
//! written out directly instead of binding a LAPACK backend: a lower
//! Cholesky with an optional escalating diagonal jitter, triangular
//! solves, and a cyclic Jacobi eigenvalue sweep for definiteness checks.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] on a non-positive pivot.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Cholesky with an escalating diagonal jitter for nearly singular
/// positive semidefinite matrices.
///
/// The jitter starts at `rel * trace(a) / n` and grows tenfold per retry.
/// Returns the factor together with the jitter that was actually applied
/// (0.0 when the plain factorization succeeded).
pub fn cholesky_jitter(a: &Array2<f64>, rel: f64) -> Result<(Array2<f64>, f64)> {
    if let Ok(l) = cholesky(a) {
        return Ok((l, 0.0));
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
    let base = rel * (trace.abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = base;
    for _ in 0..12 {
        let mut aj = a.clone();
        for i in 0..n {
            aj[[i, i]] += jitter;
        }
        if let Ok(l) = cholesky(&aj) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Solve `L x = b` for lower triangular `L`.
pub fn forward_substitute(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `L X = B` column-wise for lower triangular `L`.
pub fn forward_substitute_mat(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = lik * x[[k, j]];
                x[[i, j]] -= v;
            }
        }
        let d = l[[i, i]];
        for j in 0..m {
            x[[i, j]] /= d;
        }
    }
    x
}

/// Solve `Lᵀ x = b` for lower triangular `L`.
pub fn backward_substitute(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `A x = b` given the lower Cholesky factor of `A`.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    backward_substitute(l, &forward_substitute(l, b))
}

/// Inverse of a symmetric positive definite matrix from its lower
/// Cholesky factor. The result is symmetrized to remove rounding skew.
pub fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        inv.column_mut(j).assign(&col);
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

/// `log det A` from the lower Cholesky factor of `A`.
pub fn cholesky_log_det(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[[i, i]].ln()).sum()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Array1<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    // Symmetrize once so rounding skew in the input cannot bias the sweep.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let frob: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Array1::from_vec(vals)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigenvalue_extremes(a: &Array2<f64>) -> (f64, f64) {
    let vals = symmetric_eigenvalues(a);
    (vals[0], vals[vals.len() - 1])
}

/// Relative-tolerance positive semidefiniteness check: the smallest
/// eigenvalue may dip below zero by at most `rel` times the largest.
///
/// The relative form is deliberate; severely ill-conditioned kernel
/// matrices fail any absolute threshold.
pub fn is_psd(a: &Array2<f64>, rel: f64) -> bool {
    let (min, max) = eigenvalue_extremes(a);
    min >= -rel * max.max(f64::MIN_POSITIVE)
}

/// Symmetric factor `F` with `F Fᵀ ≈ A` for a positive semidefinite `A`,
/// built from the eigendecomposition with negative eigenvalues clamped
/// to zero. Fallback for matrices too singular for a jittered Cholesky.
pub fn psd_factor_eigen(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut f = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let w = m[[j, j]].max(0.0).sqrt();
        for i in 0..n {
            f[[i, j]] = v[[i, j]] * w;
        }
    }
    f
}
