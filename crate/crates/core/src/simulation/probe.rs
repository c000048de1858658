//! Monte Carlo probe of the score's insensitivity to nuisance error.
//!
//! Perturbs the true nuisance triple along a chosen direction, evaluates the
//! estimating score L at gamma0 on an r grid with common random draws, fits
//! a quadratic in r per draw, and averages the per-draw slope and curvature.
//! For a first-order-insensitive score the slope at r = 0 is zero in
//! expectation, so the reported slope should sit within a few standard
//! errors of zero while the curvature generally does not.

use super::{generate, DgpSpec};
use crate::error::{Error, Result};
use crate::learners::design::cholesky_solve;
use crate::rng::Stream;
use crate::util::CompensatedSum;
use crate::weights::Estimand;
use ndarray::Array2;

/// Default r grid, symmetric about 0.
pub const DEFAULT_GRID: [f64; 5] = [-0.2, -0.1, 0.0, 0.1, 0.2];

/// Nuisance perturbation direction. Propensity perturbations use the shape
/// delta_e = scale * e (1 - e), which vanishes at the boundary, so the
/// perturbed propensity stays inside (0, 1) whenever |r * scale| <= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Zero,
    /// Constant shifts of the arm means.
    OutcomeShift {
        dmu0: f64,
        dmu1: f64,
    },
    /// Propensity-only tilt.
    PropensityTilt {
        scale: f64,
    },
    /// Joint propensity and outcome perturbation.
    Joint {
        dmu0: f64,
        dmu1: f64,
        scale: f64,
    },
}

impl Direction {
    /// (delta_e, delta_mu0, delta_mu1) at a point with true propensity e.
    fn deltas(&self, e: f64) -> (f64, f64, f64) {
        match *self {
            Direction::Zero => (0.0, 0.0, 0.0),
            Direction::OutcomeShift { dmu0, dmu1 } => (0.0, dmu0, dmu1),
            Direction::PropensityTilt { scale } => (scale * e * (1.0 - e), 0.0, 0.0),
            Direction::Joint { dmu0, dmu1, scale } => (scale * e * (1.0 - e), dmu0, dmu1),
        }
    }

    fn tilt_scale(&self) -> f64 {
        match *self {
            Direction::PropensityTilt { scale } | Direction::Joint { scale, .. } => scale,
            _ => 0.0,
        }
    }
}

/// Fitted behaviour of the mean score along the perturbation ray.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Slope of the quadratic fit at r = 0, averaged over draws.
    pub slope: f64,
    pub slope_se: f64,
    /// Quadratic coefficient of the fit, averaged over draws.
    pub curvature: f64,
    pub curvature_se: f64,
    pub grid: Vec<f64>,
    /// Monte Carlo mean of the score at each grid point.
    pub g_means: Vec<f64>,
    pub n_mc: usize,
}

/// Least-squares contrast weights for the slope and quadratic coefficients
/// of a quadratic fit on the grid.
fn quadratic_contrasts(grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = grid.len();
    let mut g = Array2::zeros((3, 3));
    for &r in grid {
        let x = [1.0, r, r * r];
        for i in 0..3 {
            for j in 0..3 {
                g[[i, j]] += x[i] * x[j];
            }
        }
    }
    let mut slope_w = Vec::with_capacity(m);
    let mut curv_w = Vec::with_capacity(m);
    for &r in grid {
        let w = cholesky_solve(&g, &[1.0, r, r * r]).ok_or_else(|| {
            Error::Config("probe grid must contain at least 3 distinct r values".into())
        })?;
        slope_w.push(w[1]);
        curv_w.push(w[2]);
    }
    Ok((slope_w, curv_w))
}

/// Estimates the slope and curvature of r -> E[L(V; gamma0, phi0 + r delta)]
/// at r = 0 by Monte Carlo, with the same draws reused across the grid.
pub fn orthogonality_probe(
    dgp: &DgpSpec,
    w: &Estimand,
    gamma0: f64,
    direction: &Direction,
    n_mc: usize,
    grid: &[f64],
    stream: &Stream,
) -> Result<ProbeResult> {
    dgp.validate()?;
    if n_mc < 2 {
        return Err(Error::Config("probe needs at least 2 draws".into()));
    }
    if grid.len() < 3 {
        return Err(Error::Config(
            "probe grid must contain at least 3 distinct r values".into(),
        ));
    }
    if let Some(r) = grid.iter().find(|r| !r.is_finite()) {
        return Err(Error::Config(format!("grid value {r} is not finite")));
    }
    let max_tilt = grid
        .iter()
        .map(|r| (r * direction.tilt_scale()).abs())
        .fold(0.0f64, f64::max);
    if max_tilt > 1.0 {
        return Err(Error::Domain(format!(
            "perturbed propensity can exit (0, 1): |r * scale| reaches {max_tilt:.3}, \
             keep it at or below 1"
        )));
    }
    let (slope_w, curv_w) = quadratic_contrasts(grid)?;

    // One generated block at a time keeps memory flat while reusing the
    // dataset generator's draw discipline.
    const BLOCK: usize = 8192;
    let mut slope_mean = 0.0;
    let mut slope_m2 = 0.0;
    let mut curv_mean = 0.0;
    let mut curv_m2 = 0.0;
    let mut g_sums: Vec<CompensatedSum> = (0..grid.len()).map(|_| CompensatedSum::new()).collect();
    let mut seen = 0usize;
    let mut block_idx = 0u64;
    while seen < n_mc {
        let want = BLOCK.min(n_mc - seen).max(2);
        let gen = generate(dgp, want, &stream.child("probe-block", block_idx))?;
        block_idx += 1;
        let a = gen.data.treatment();
        let y = gen.data.outcome();
        for i in 0..want {
            if seen == n_mc {
                break;
            }
            let e = gen.e[i];
            let (de, dm0, dm1) = direction.deltas(e);
            let ai = a[i] as f64;
            let mut slope_i = 0.0;
            let mut curv_i = 0.0;
            for (j, &r) in grid.iter().enumerate() {
                let er = e + r * de;
                if !(er > 0.0 && er < 1.0) {
                    return Err(Error::Domain(format!(
                        "perturbed propensity {er} left (0, 1) at r = {r}"
                    )));
                }
                let m0r = gen.mu0[i] + r * dm0;
                let m1r = gen.mu1[i] + r * dm1;
                let taur = m1r - m0r;
                let lam = w.weight(er);
                let lam_d1 = w.d1(er);
                let psi = ai / er * (y[i] - m1r) - (1.0 - ai) / (1.0 - er) * (y[i] - m0r) + taur;
                let d_val = lam + lam_d1 * (ai - er);
                let n_val = lam * psi + lam_d1 * taur * (ai - er);
                let l = gamma0 * d_val - n_val;
                slope_i += slope_w[j] * l;
                curv_i += curv_w[j] * l;
                g_sums[j].add(l);
            }
            seen += 1;
            let k = seen as f64;
            let ds = slope_i - slope_mean;
            slope_mean += ds / k;
            slope_m2 += ds * (slope_i - slope_mean);
            let dc = curv_i - curv_mean;
            curv_mean += dc / k;
            curv_m2 += dc * (curv_i - curv_mean);
        }
    }
    let nf = n_mc as f64;
    Ok(ProbeResult {
        slope: slope_mean,
        slope_se: (slope_m2 / (nf - 1.0) / nf).sqrt(),
        curvature: curv_mean,
        curvature_se: (curv_m2 / (nf - 1.0) / nf).sqrt(),
        grid: grid.to_vec(),
        g_means: g_sums.iter().map(|s| s.value() / nf).collect(),
        n_mc,
    })
}
