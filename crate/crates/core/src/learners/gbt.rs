//! Gradient-boosted stumps: depth-1 trees fit to Newton gradients.
//!
//! One shared split search serves both losses. Each round scores every
//! feature/threshold pair by the Newton gain G_L²/H_L + G_R²/H_R, with G the
//! gradient sum and H the Hessian sum on each side (H is the row count under
//! squared error). Ties break toward the lowest feature index, then the
//! lowest threshold, so fits are deterministic. No subsampling is used.

use crate::data::Dataset;
use crate::error::{Error, Result};
use ndarray::ArrayView2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 200,
            learning_rate: 0.1,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("gbt rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "gbt learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Loss {
    Squared,
    Logit,
}

/// A fitted stump: rows with `x[feature] <= threshold` receive `left`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone)]
pub struct GbtModel {
    base: f64,
    stumps: Vec<Stump>,
    loss: Loss,
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Per-row gradient and Hessian of the loss at the current score.
fn grad_hess(loss: Loss, score: f64, target: f64) -> (f64, f64) {
    match loss {
        Loss::Squared => (target - score, 1.0),
        Loss::Logit => {
            let mu = sigmoid(score);
            (target - mu, (mu * (1.0 - mu)).max(1e-10))
        }
    }
}

pub(crate) fn fit(
    d: &Dataset,
    rows: &[usize],
    targets: &[f64],
    loss: Loss,
    params: &GbtParams,
) -> Result<GbtModel> {
    params.validate()?;
    debug_assert_eq!(rows.len(), targets.len());
    let n = rows.len();
    let x = d.covariates();
    let p = x.ncols();

    // Rank rows by each feature once; rounds reuse the ordering.
    let order: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[[rows[a], j]].total_cmp(&x[[rows[b], j]]));
            idx
        })
        .collect();

    let base = match loss {
        Loss::Squared => targets.iter().sum::<f64>() / n as f64,
        Loss::Logit => {
            let mean = (targets.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
            (mean / (1.0 - mean)).ln()
        }
    };
    let mut score = vec![base; n];
    let mut stumps = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        let mut g = vec![0.0f64; n];
        let mut h = vec![0.0f64; n];
        let mut g_total = 0.0;
        let mut h_total = 0.0;
        for i in 0..n {
            let (gi, hi) = grad_hess(loss, score[i], targets[i]);
            g[i] = gi;
            h[i] = hi;
            g_total += gi;
            h_total += hi;
        }

        let parent_gain = g_total * g_total / h_total;
        let mut best: Option<(f64, usize, f64, f64, f64)> = None;
        for (j, idx) in order.iter().enumerate() {
            let mut gl = 0.0;
            let mut hl = 0.0;
            for w in 0..(n - 1) {
                let i = idx[w];
                gl += g[i];
                hl += h[i];
                let here = x[[rows[i], j]];
                let next = x[[rows[idx[w + 1]], j]];
                if here == next {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                if hl <= 1e-12 || hr <= 1e-12 {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - parent_gain;
                if best.map_or(gain > 1e-12, |b| gain > b.0) {
                    let threshold = 0.5 * (here + next);
                    best = Some((gain, j, threshold, gl / hl, gr / hr));
                }
            }
        }

        let stump = match best {
            Some((_, feature, threshold, left, right)) => Stump {
                feature,
                threshold,
                left: params.learning_rate * left,
                right: params.learning_rate * right,
            },
            // No informative split: apply the constant Newton correction.
            None => Stump {
                feature: 0,
                threshold: f64::INFINITY,
                left: params.learning_rate * g_total / h_total,
                right: 0.0,
            },
        };
        for i in 0..n {
            score[i] += if x[[rows[i], stump.feature]] <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
        }
        stumps.push(stump);
    }

    Ok(GbtModel { base, stumps, loss })
}

impl GbtModel {
    fn raw(&self, x: ArrayView2<'_, f64>, row: usize) -> f64 {
        let mut s = self.base;
        for st in &self.stumps {
            s += if x[[row, st.feature]] <= st.threshold {
                st.left
            } else {
                st.right
            };
        }
        s
    }

    /// Predictions on the requested rows: means under squared error,
    /// probabilities under the logit loss.
    pub fn predict(&self, d: &Dataset, rows: &[usize]) -> Vec<f64> {
        let x = d.covariates();
        rows.iter()
            .map(|&r| {
                let s = self.raw(x, r);
                match self.loss {
                    Loss::Squared => s,
                    Loss::Logit => sigmoid(s),
                }
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn stumps(&self) -> &[Stump] {
        &self.stumps
    }
}
