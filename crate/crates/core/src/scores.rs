//! Per-observation score components shared by every estimator.
//!
//! For each observation the influence-function machinery needs the weight
//! `lambda(e)`, its slope, the augmented effect score `psi_tau`, and the
//! linear-score pieces `D = lambda(e) + lambda'(e)(A - e)` and
//! `N = lambda(e) psi_tau + lambda'(e) tau_hat (A - e)`. Every estimator is
//! a ratio or fold-average of these, and the linear score at a candidate
//! gamma is `L(gamma) = gamma D - N`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::NuisanceFit;
use crate::weights::Estimand;

/// Score pieces for a single observation.
#[derive(Debug, Clone, Copy)]
pub struct ScoreObs {
    pub row: usize,
    pub lambda: f64,
    pub lambda_d1: f64,
    /// Treatment residual A - e_hat.
    pub a_minus_e: f64,
    /// mu1_hat - mu0_hat.
    pub tau_hat: f64,
    /// Inverse-propensity effect score AY/e - (1-A)Y/(1-e).
    pub tau_ipw: f64,
    /// Augmented effect score (A/e)(Y-mu1) - ((1-A)/(1-e))(Y-mu0) + tau_hat.
    pub psi_tau: f64,
    pub d_val: f64,
    pub n_val: f64,
}

/// The linear score evaluated at a candidate gamma.
#[derive(Debug, Clone)]
pub struct ScoreAtGamma {
    pub gamma: f64,
    pub l_vals: Vec<f64>,
}

/// Computes score components for the rows a nuisance fit covers.
pub fn score_components(d: &Dataset, fit: &NuisanceFit, w: &Estimand) -> Result<Vec<ScoreObs>> {
    let m = fit.rows.len();
    if fit.e_hat.len() != m || fit.mu0_hat.len() != m || fit.mu1_hat.len() != m {
        return Err(Error::Data(format!(
            "nuisance fit covers {m} rows but carries {} propensity, {} mu0, {} mu1 values",
            fit.e_hat.len(),
            fit.mu0_hat.len(),
            fit.mu1_hat.len()
        )));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let row = fit.rows[i];
        if row >= d.n() {
            return Err(Error::Data(format!(
                "nuisance fit covers row {row}, dataset has {} rows",
                d.n()
            )));
        }
        let e = fit.e_hat[i];
        let a = d.treatment()[row] as f64;
        let y = d.outcome()[row];
        let mu0 = fit.mu0_hat[i];
        let mu1 = fit.mu1_hat[i];

        let lambda = w.eval(e, 0)?;
        let lambda_d1 = w.eval(e, 1)?;
        let tau_hat = mu1 - mu0;
        let psi_tau = a / e * (y - mu1) - (1.0 - a) / (1.0 - e) * (y - mu0) + tau_hat;
        let tau_ipw = a * y / e - (1.0 - a) * y / (1.0 - e);
        let a_minus_e = a - e;
        out.push(ScoreObs {
            row,
            lambda,
            lambda_d1,
            a_minus_e,
            tau_hat,
            tau_ipw,
            psi_tau,
            d_val: lambda + lambda_d1 * a_minus_e,
            n_val: lambda * psi_tau + lambda_d1 * tau_hat * a_minus_e,
        });
    }
    Ok(out)
}

/// Evaluates L(gamma) = gamma d_i - n_i for every observation.
pub fn score_at_gamma(scores: &[ScoreObs], gamma: f64) -> ScoreAtGamma {
    ScoreAtGamma {
        gamma,
        l_vals: scores.iter().map(|s| gamma * s.d_val - s.n_val).collect(),
    }
}
