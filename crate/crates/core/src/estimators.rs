//! Point estimators: two plug-in baselines, the full-sample
//! influence-function estimator, and the two cross-fitted variants.
//!
//! All five reduce to ratios of score sums. The cross-fitted variants differ
//! only in where the ratio is taken: per fold then averaged (dml1) or pooled
//! across folds (dml2).

use crate::error::{Error, Result};
use crate::scores::ScoreObs;
use crate::util::CompensatedSum;
use std::fmt;
use std::str::FromStr;

/// Estimation method identifier, also used in reports and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive1,
    Naive2,
    Eif,
    Dml1,
    Dml2,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Naive1,
        Method::Naive2,
        Method::Eif,
        Method::Dml1,
        Method::Dml2,
    ];

    pub fn is_cross_fitted(&self) -> bool {
        matches!(self, Method::Dml1 | Method::Dml2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Naive1 => "naive1",
            Method::Naive2 => "naive2",
            Method::Eif => "eif",
            Method::Dml1 => "dml1",
            Method::Dml2 => "dml2",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive1" => Ok(Method::Naive1),
            "naive2" => Ok(Method::Naive2),
            "eif" => Ok(Method::Eif),
            "dml1" => Ok(Method::Dml1),
            "dml2" => Ok(Method::Dml2),
            other => Err(Error::Config(format!(
                "unknown method '{other}'; valid choices: naive1, naive2, eif, dml1, dml2"
            ))),
        }
    }
}

/// How dml1 combines fold-level estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldWeighting {
    /// Every fold counts the same, matching the printed algorithm.
    Equal,
    /// Folds weighted by their row counts (sizes can differ by one).
    BySize,
}

/// Per-fold sums and the fold-level ratio estimate.
#[derive(Debug, Clone, Copy)]
pub struct FoldDetail {
    pub fold: usize,
    pub n_rows: usize,
    pub sum_d: f64,
    pub sum_n: f64,
    pub gamma: f64,
}

/// A cross-fitted point estimate with its per-fold breakdown.
#[derive(Debug, Clone)]
pub struct DmlEstimate {
    pub gamma: f64,
    pub folds: Vec<FoldDetail>,
}

fn weighted_ratio(
    scores: &[ScoreObs],
    num: impl Fn(&ScoreObs) -> f64,
    den: impl Fn(&ScoreObs) -> f64,
    what: &str,
) -> Result<f64> {
    let mut sn = CompensatedSum::new();
    let mut sd = CompensatedSum::new();
    for s in scores {
        sn.add(num(s));
        sd.add(den(s));
    }
    let d = sd.value();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Degenerate(format!(
            "{what} denominator sums to {d} over {} observations",
            scores.len()
        )));
    }
    Ok(sn.value() / d)
}

/// Plug-in estimate P_n[lambda tau_hat] / P_n[lambda].
pub fn estimate_naive1(scores: &[ScoreObs]) -> Result<f64> {
    weighted_ratio(scores, |s| s.lambda * s.tau_hat, |s| s.lambda, "weight")
}

/// Inverse-propensity plug-in estimate P_n[lambda tau_ipw] / P_n[lambda].
pub fn estimate_naive2(scores: &[ScoreObs]) -> Result<f64> {
    weighted_ratio(scores, |s| s.lambda * s.tau_ipw, |s| s.lambda, "weight")
}

/// Influence-function estimate: sum of N over sum of D.
pub fn estimate_eif(scores: &[ScoreObs]) -> Result<f64> {
    weighted_ratio(scores, |s| s.n_val, |s| s.d_val, "score")
}

fn fold_sums(scores: &[ScoreObs]) -> (f64, f64) {
    let mut sn = CompensatedSum::new();
    let mut sd = CompensatedSum::new();
    for s in scores {
        sn.add(s.n_val);
        sd.add(s.d_val);
    }
    (sn.value(), sd.value())
}

/// Fold-averaged cross-fitted estimate: each fold contributes its own
/// ratio.
pub fn estimate_dml1(
    fold_scores: &[Vec<ScoreObs>],
    weighting: FoldWeighting,
) -> Result<DmlEstimate> {
    if fold_scores.is_empty() {
        return Err(Error::Config("no folds to estimate from".into()));
    }
    let mut folds = Vec::with_capacity(fold_scores.len());
    for (k, scores) in fold_scores.iter().enumerate() {
        let (sum_n, sum_d) = fold_sums(scores);
        if sum_d == 0.0 || !sum_d.is_finite() {
            return Err(Error::fold(
                k,
                Error::Degenerate(format!(
                    "score denominator sums to {sum_d} over {} observations",
                    scores.len()
                )),
            ));
        }
        folds.push(FoldDetail {
            fold: k,
            n_rows: scores.len(),
            sum_d,
            sum_n,
            gamma: sum_n / sum_d,
        });
    }
    let gamma = match weighting {
        FoldWeighting::Equal => folds.iter().map(|f| f.gamma).sum::<f64>() / folds.len() as f64,
        FoldWeighting::BySize => {
            let total: usize = folds.iter().map(|f| f.n_rows).sum();
            folds.iter().map(|f| f.gamma * f.n_rows as f64).sum::<f64>() / total as f64
        }
    };
    Ok(DmlEstimate { gamma, folds })
}

/// Pooled cross-fitted estimate: one ratio over all folds' scores.
pub fn estimate_dml2(fold_scores: &[Vec<ScoreObs>]) -> Result<DmlEstimate> {
    if fold_scores.is_empty() {
        return Err(Error::Config("no folds to estimate from".into()));
    }
    let mut folds = Vec::with_capacity(fold_scores.len());
    let mut total_n = CompensatedSum::new();
    let mut total_d = CompensatedSum::new();
    for (k, scores) in fold_scores.iter().enumerate() {
        let (sum_n, sum_d) = fold_sums(scores);
        total_n.add(sum_n);
        total_d.add(sum_d);
        folds.push(FoldDetail {
            fold: k,
            n_rows: scores.len(),
            sum_d,
            sum_n,
            gamma: if sum_d != 0.0 {
                sum_n / sum_d
            } else {
                f64::NAN
            },
        });
    }
    let d = total_d.value();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Degenerate(format!(
            "pooled score denominator sums to {d}"
        )));
    }
    Ok(DmlEstimate {
        gamma: total_n.value() / d,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::learners::{Clip, NuisanceFit, Provenance};
    use crate::scores::score_components;
    use crate::weights::Estimand;
    use ndarray::Array2;

    fn obs(d_val: f64, n_val: f64) -> ScoreObs {
        ScoreObs {
            row: 0,
            lambda: 1.0,
            lambda_d1: 0.0,
            a_minus_e: 0.0,
            tau_hat: 0.0,
            tau_ipw: 0.0,
            psi_tau: 0.0,
            d_val,
            n_val,
        }
    }

    fn two_row_scores(w: &Estimand) -> Vec<ScoreObs> {
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 0.0]).unwrap();
        let d = Dataset::from_parts(x, vec![1, 0], vec![2.0, 0.0]).unwrap();
        let fit = NuisanceFit {
            rows: vec![0, 1],
            e_hat: vec![0.5, 0.5],
            mu0_hat: vec![0.0, 0.0],
            mu1_hat: vec![1.0, 1.0],
            clip: Clip::default(),
            clipped_low: 0,
            clipped_high: 0,
            provenance: Provenance {
                propensity: "oracle:provided".into(),
                outcome0: "oracle:provided".into(),
                outcome1: "oracle:provided".into(),
                train_digest: String::new(),
            },
        };
        score_components(&d, &fit, w).unwrap()
    }

    #[test]
    fn two_row_fixture_estimates() {
        for w in [Estimand::Ate, Estimand::Ato] {
            let s = two_row_scores(&w);
            assert!((estimate_naive1(&s).unwrap() - 1.0).abs() < 1e-15, "{w}");
            assert!((estimate_naive2(&s).unwrap() - 2.0).abs() < 1e-15, "{w}");
            assert!((estimate_eif(&s).unwrap() - 2.0).abs() < 1e-15, "{w}");
        }
    }

    #[test]
    fn constant_tau_is_recovered_by_naive1() {
        let mut s = two_row_scores(&Estimand::Aten);
        for o in &mut s {
            o.tau_hat = 7.0;
        }
        assert!((estimate_naive1(&s).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn ate_naive1_is_the_plain_mean() {
        let mut s = two_row_scores(&Estimand::Ate);
        s[0].tau_hat = 1.0;
        s[1].tau_hat = 3.0;
        assert_eq!(estimate_naive1(&s).unwrap(), 2.0);
    }

    #[test]
    fn zero_outcomes_give_zero_naive2() {
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 0.0]).unwrap();
        let d = Dataset::from_parts(x, vec![1, 0], vec![0.0, 0.0]).unwrap();
        let fit = NuisanceFit {
            rows: vec![0, 1],
            e_hat: vec![0.5, 0.5],
            mu0_hat: vec![0.0, 0.0],
            mu1_hat: vec![0.0, 0.0],
            clip: Clip::default(),
            clipped_low: 0,
            clipped_high: 0,
            provenance: Provenance {
                propensity: String::new(),
                outcome0: String::new(),
                outcome1: String::new(),
                train_digest: String::new(),
            },
        };
        let s = score_components(&d, &fit, &Estimand::Ato).unwrap();
        assert_eq!(estimate_naive2(&s).unwrap(), 0.0);
    }

    #[test]
    fn dml_variants_differ_as_hand_computed() {
        // Folds with (sum n, sum d) = (1, 1) and (9, 3).
        let folds = vec![vec![obs(1.0, 1.0)], vec![obs(3.0, 9.0)]];
        let dml1 = estimate_dml1(&folds, FoldWeighting::Equal).unwrap();
        assert_eq!(dml1.gamma, 2.0);
        assert_eq!(dml1.folds[0].gamma, 1.0);
        assert_eq!(dml1.folds[1].gamma, 3.0);
        let dml2 = estimate_dml2(&folds).unwrap();
        assert_eq!(dml2.gamma, 2.5);
    }

    #[test]
    fn size_weighting_uses_fold_row_counts() {
        let folds = vec![vec![obs(1.0, 1.0)], vec![obs(1.5, 4.5), obs(1.5, 4.5)]];
        let equal = estimate_dml1(&folds, FoldWeighting::Equal).unwrap();
        assert_eq!(equal.gamma, 2.0);
        let sized = estimate_dml1(&folds, FoldWeighting::BySize).unwrap();
        assert!((sized.gamma - (1.0 + 2.0 * 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_folds_match_the_full_sample_estimate() {
        let all = two_row_scores(&Estimand::Ate);
        let folds = vec![all.clone(), all.clone()];
        let pooled = estimate_eif(&all).unwrap();
        let dml1 = estimate_dml1(&folds, FoldWeighting::Equal).unwrap();
        let dml2 = estimate_dml2(&folds).unwrap();
        assert_eq!(dml1.gamma, pooled);
        assert_eq!(dml2.gamma, pooled);
    }

    #[test]
    fn outcome_scaling_scales_every_estimator() {
        let base = two_row_scores(&Estimand::Ato);
        let scaled: Vec<ScoreObs> = base
            .iter()
            .map(|s| {
                let mut t = *s;
                t.tau_hat *= 3.0;
                t.tau_ipw *= 3.0;
                t.psi_tau *= 3.0;
                t.n_val *= 3.0;
                t
            })
            .collect();
        assert!(
            (estimate_naive1(&scaled).unwrap() - 3.0 * estimate_naive1(&base).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (estimate_naive2(&scaled).unwrap() - 3.0 * estimate_naive2(&base).unwrap()).abs()
                < 1e-12
        );
        assert!(
            (estimate_eif(&scaled).unwrap() - 3.0 * estimate_eif(&base).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn degenerate_denominators_error() {
        let s = vec![obs(1.0, 1.0), obs(-1.0, 1.0)];
        assert!(matches!(estimate_eif(&s), Err(Error::Degenerate(_))));
        let folds = vec![vec![obs(1.0, 1.0)], vec![obs(0.0, 1.0)]];
        assert!(matches!(
            estimate_dml1(&folds, FoldWeighting::Equal),
            Err(Error::Fold { fold: 1, .. })
        ));
        let folds = vec![vec![obs(1.0, 1.0)], vec![obs(-1.0, 1.0)]];
        assert!(matches!(estimate_dml2(&folds), Err(Error::Degenerate(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            let parsed: Method = m.to_string().parse().unwrap();
            assert_eq!(parsed, m);
        }
        assert!("dml3".parse::<Method>().is_err());
        assert!(Method::Dml1.is_cross_fitted());
        assert!(!Method::Eif.is_cross_fitted());
    }
}
