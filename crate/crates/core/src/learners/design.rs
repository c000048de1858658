//! Design-matrix construction and the small dense solver shared by the
//! linear and logistic fitters.

use ndarray::{Array2, ArrayView2};

/// Builds the regression design for the given rows: an intercept column,
/// the raw covariates, and optionally all pairwise products x_j * x_k
/// (j < k).
pub(crate) fn design_matrix(
    x: ArrayView2<'_, f64>,
    rows: &[usize],
    interactions: bool,
) -> Array2<f64> {
    let p = x.ncols();
    let mut out = Array2::zeros((rows.len(), design_width(p, interactions)));
    for (i, &row) in rows.iter().enumerate() {
        out[[i, 0]] = 1.0;
        for j in 0..p {
            out[[i, 1 + j]] = x[[row, j]];
        }
        if interactions {
            let mut c = 1 + p;
            for j in 0..p {
                for k in (j + 1)..p {
                    out[[i, c]] = x[[row, j]] * x[[row, k]];
                    c += 1;
                }
            }
        }
    }
    out
}

/// Number of design columns for a covariate dimension.
pub(crate) fn design_width(p: usize, interactions: bool) -> usize {
    if interactions {
        1 + p + p * (p - 1) / 2
    } else {
        1 + p
    }
}

/// Solves the symmetric positive-definite system `A x = b` by Cholesky
/// factorization. Returns `None` when a pivot is not safely positive, which
/// the callers treat as a signal to escalate the ridge penalty.
pub(crate) fn cholesky_solve(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let d = a.nrows();
    debug_assert_eq!(a.ncols(), d);
    debug_assert_eq!(b.len(), d);
    let mut l = vec![0.0f64; d * d];
    for j in 0..d {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag.is_nan() || diag <= 1e-12 * (1.0 + a[[j, j]].abs()) {
            return None;
        }
        let diag = diag.sqrt();
        l[j * d + j] = diag;
        for i in (j + 1)..d {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = v / diag;
        }
    }
    let mut y = vec![0.0f64; d];
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * d + k] * y[k];
        }
        y[i] = v / l[i * d + i];
    }
    let mut x = vec![0.0f64; d];
    for i in (0..d).rev() {
        let mut v = y[i];
        for k in (i + 1)..d {
            v -= l[k * d + i] * x[k];
        }
        x[i] = v / l[i * d + i];
    }
    Some(x)
}
