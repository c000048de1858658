//! Linear outcome model: least squares with an escalating ridge fallback.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::design::{cholesky_solve, design_matrix};
use ndarray::Array2;

/// Ridge penalties tried in order. Zero is skipped when the system cannot be
/// full rank (fewer rows than design columns).
pub(crate) const RIDGE_SCHEDULE: [f64; 8] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone)]
pub struct LinearModel {
    beta: Vec<f64>,
    interactions: bool,
    penalty: f64,
}

/// Gram matrix X'X and moment vector X'y, with the ridge penalty added to
/// every diagonal entry except the intercept's.
fn normal_equations(x: &Array2<f64>, y: &[f64], penalty: f64) -> (Array2<f64>, Vec<f64>) {
    let d = x.ncols();
    let mut xtx = Array2::zeros((d, d));
    let mut xty = vec![0.0f64; d];
    for (i, yi) in y.iter().enumerate() {
        for a in 0..d {
            let xa = x[[i, a]];
            xty[a] += xa * yi;
            for b in a..d {
                xtx[[a, b]] += xa * x[[i, b]];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[[a, b]] = xtx[[b, a]];
        }
    }
    for a in 1..d {
        xtx[[a, a]] += penalty;
    }
    (xtx, xty)
}

/// Solves the penalized normal equations, escalating the penalty until the
/// system factors and the solution is finite.
pub(crate) fn solve_least_squares(x: &Array2<f64>, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    for &penalty in &RIDGE_SCHEDULE {
        if penalty == 0.0 && x.nrows() < x.ncols() {
            continue;
        }
        let (xtx, xty) = normal_equations(x, y, penalty);
        if let Some(beta) = cholesky_solve(&xtx, &xty) {
            if beta.iter().all(|b| b.is_finite()) {
                return Ok((beta, penalty));
            }
        }
    }
    Err(Error::Degenerate(
        "least squares failed at every ridge penalty".into(),
    ))
}

pub(crate) fn fit(
    d: &Dataset,
    rows: &[usize],
    targets: &[f64],
    interactions: bool,
) -> Result<LinearModel> {
    debug_assert_eq!(rows.len(), targets.len());
    let x = design_matrix(d.covariates(), rows, interactions);
    let (beta, penalty) = solve_least_squares(&x, targets)?;
    Ok(LinearModel {
        beta,
        interactions,
        penalty,
    })
}

impl LinearModel {
    pub fn predict(&self, d: &Dataset, rows: &[usize]) -> Vec<f64> {
        let x = design_matrix(d.covariates(), rows, self.interactions);
        x.rows()
            .into_iter()
            .map(|r| r.iter().zip(&self.beta).map(|(xi, bi)| xi * bi).sum())
            .collect()
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }
}
