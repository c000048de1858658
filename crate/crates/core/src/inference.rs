//! Variance estimation, Wald confidence intervals, and multi-split
//! aggregation.
//!
//! The full-sample estimator uses the empirical mean square of the plug-in
//! influence function. The cross-fitted estimators use the linear-score
//! variance: sigma2 = J^-2 times the fold-averaged mean of L(gamma_hat)^2,
//! with J the fold-averaged mean of D. Confidence intervals are
//! gamma_hat +/- z * sqrt(sigma2 / n). A known-propensity variant drops the
//! weight-slope correction term, and the difference is the efficiency gain
//! from estimating the propensity score.

use crate::error::{Error, Result};
use crate::normal::std_normal_quantile;
use crate::scores::ScoreObs;
use crate::util::{mean_c, median, CompensatedSum};

/// How per-split (estimate, variance) pairs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// No aggregation; exactly one split.
    Single,
    Mean,
    Median,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Aggregation::Single => "single",
            Aggregation::Mean => "mean",
            Aggregation::Median => "median",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Aggregation::Single),
            "mean" => Ok(Aggregation::Mean),
            "median" => Ok(Aggregation::Median),
            other => Err(Error::Config(format!(
                "unknown aggregation '{other}'; valid choices: single, mean, median"
            ))),
        }
    }
}

fn mean_d(scores: &[ScoreObs]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Degenerate("no observations to estimate from".into()));
    }
    let mut s = CompensatedSum::new();
    for o in scores {
        s.add(o.d_val);
    }
    let m = s.value() / scores.len() as f64;
    if m == 0.0 || !m.is_finite() {
        return Err(Error::Degenerate(format!(
            "empirical mean of the score denominator is {m}"
        )));
    }
    Ok(m)
}

/// Mean square of the plug-in influence function
/// (n_i - gamma_hat d_i) / P_n[D].
pub fn variance_eif(scores: &[ScoreObs], gamma_hat: f64) -> Result<f64> {
    let pd = mean_d(scores)?;
    let mut s = CompensatedSum::new();
    for o in scores {
        let phi = (o.n_val - gamma_hat * o.d_val) / pd;
        s.add(phi * phi);
    }
    Ok(s.value() / scores.len() as f64)
}

/// Cross-fitted variance: J^-2 times the fold average of the within-fold
/// mean of L(gamma_hat)^2, with J the fold average of the within-fold mean
/// of D.
pub fn variance_dml(fold_scores: &[Vec<ScoreObs>], gamma_hat: f64) -> Result<f64> {
    if fold_scores.is_empty() {
        return Err(Error::Config("no folds to estimate from".into()));
    }
    let k = fold_scores.len() as f64;
    let mut j_sum = 0.0;
    let mut l2_sum = 0.0;
    for (fold, scores) in fold_scores.iter().enumerate() {
        if scores.is_empty() {
            return Err(Error::fold(
                fold,
                Error::Degenerate("fold holds no observations".into()),
            ));
        }
        let mut d = CompensatedSum::new();
        let mut l2 = CompensatedSum::new();
        for o in scores {
            d.add(o.d_val);
            let l = gamma_hat * o.d_val - o.n_val;
            l2.add(l * l);
        }
        j_sum += d.value() / scores.len() as f64;
        l2_sum += l2.value() / scores.len() as f64;
    }
    let j = j_sum / k;
    if j == 0.0 || !j.is_finite() {
        return Err(Error::Degenerate(format!(
            "fold-averaged score denominator is {j}"
        )));
    }
    Ok(l2_sum / k / (j * j))
}

/// Mean square of the known-propensity influence function
/// lambda(e) (psi_tau - gamma_hat) / P_n[D]; valid when e_hat is the true
/// propensity score.
pub fn variance_known_ps(scores: &[ScoreObs], gamma_hat: f64) -> Result<f64> {
    let pd = mean_d(scores)?;
    let mut s = CompensatedSum::new();
    for o in scores {
        let phi = o.lambda * (o.psi_tau - gamma_hat) / pd;
        s.add(phi * phi);
    }
    Ok(s.value() / scores.len() as f64)
}

/// Variance reduction from knowing the propensity score: the mean square of
/// the weight-slope correction term lambda'(e)(tau_hat - gamma_hat)(A - e)
/// over P_n[D]. Zero exactly when lambda' vanishes (overall population) or
/// when tau_hat is constant at gamma_hat.
pub fn efficiency_gain(scores: &[ScoreObs], gamma_hat: f64) -> Result<f64> {
    let pd = mean_d(scores)?;
    let mut s = CompensatedSum::new();
    for o in scores {
        let term = o.lambda_d1 * (o.tau_hat - gamma_hat) * o.a_minus_e / pd;
        s.add(term * term);
    }
    Ok(s.value() / scores.len() as f64)
}

/// Mean square of the plug-in weight deviation lambda (tau_star -
/// gamma_hat) / P_n[lambda], where tau_star is tau_hat (first plug-in
/// estimator) or tau_ipw (second). This is a comparison-only quantity: it is
/// not an asymptotically valid variance for the plug-in estimators, and
/// reports carry a warning whenever it is used.
pub fn variance_naive_comparison_only(
    scores: &[ScoreObs],
    gamma_hat: f64,
    use_ipw_tau: bool,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Degenerate("no observations to estimate from".into()));
    }
    let mut lam = CompensatedSum::new();
    for o in scores {
        lam.add(o.lambda);
    }
    let pl = lam.value() / scores.len() as f64;
    if pl == 0.0 || !pl.is_finite() {
        return Err(Error::Degenerate(format!("empirical mean weight is {pl}")));
    }
    let mut s = CompensatedSum::new();
    for o in scores {
        let tau_star = if use_ipw_tau { o.tau_ipw } else { o.tau_hat };
        let v = o.lambda * (tau_star - gamma_hat) / pl;
        s.add(v * v);
    }
    Ok(s.value() / scores.len() as f64)
}

/// Wald interval gamma_hat +/- z_{1-alpha/2} sqrt(sigma2 / n).
pub fn wald_ci(gamma_hat: f64, sigma2: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if sigma2.is_nan() || sigma2 < 0.0 {
        return Err(Error::Domain(format!(
            "variance must be >= 0, got {sigma2}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "confidence level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n == 0 {
        return Err(Error::Config(
            "interval needs at least one observation".into(),
        ));
    }
    let z = std_normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * (sigma2 / n as f64).sqrt();
    Ok((gamma_hat - half, gamma_hat + half))
}

/// Combines per-split (gamma_s, sigma2_s) pairs. The mean strategy averages
/// both, adding the across-split spread (gamma_s - gamma_hat)^2 to the
/// variance; the median strategy takes medians of the same quantities.
pub fn aggregate_splits(per_split: &[(f64, f64)], strategy: Aggregation) -> Result<(f64, f64)> {
    if per_split.is_empty() {
        return Err(Error::Config("no splits to aggregate".into()));
    }
    match strategy {
        Aggregation::Single => {
            if per_split.len() != 1 {
                return Err(Error::Config(format!(
                    "single-split aggregation got {} splits",
                    per_split.len()
                )));
            }
            Ok(per_split[0])
        }
        Aggregation::Mean => {
            let gammas: Vec<f64> = per_split.iter().map(|p| p.0).collect();
            let gamma_hat = mean_c(&gammas);
            let adjusted: Vec<f64> = per_split
                .iter()
                .map(|&(g, s2)| s2 + (g - gamma_hat) * (g - gamma_hat))
                .collect();
            Ok((gamma_hat, mean_c(&adjusted)))
        }
        Aggregation::Median => {
            let gammas: Vec<f64> = per_split.iter().map(|p| p.0).collect();
            let gamma_hat = median(&gammas);
            let adjusted: Vec<f64> = per_split
                .iter()
                .map(|&(g, s2)| s2 + (g - gamma_hat) * (g - gamma_hat))
                .collect();
            Ok((gamma_hat, median(&adjusted)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(lambda: f64, lambda_d1: f64, a_minus_e: f64, tau_hat: f64, psi_tau: f64) -> ScoreObs {
        ScoreObs {
            row: 0,
            lambda,
            lambda_d1,
            a_minus_e,
            tau_hat,
            tau_ipw: 0.0,
            psi_tau,
            d_val: lambda + lambda_d1 * a_minus_e,
            n_val: lambda * psi_tau + lambda_d1 * tau_hat * a_minus_e,
        }
    }

    /// ATE-style scores for the two-row fixture: psi values 3 and 1.
    fn fixture() -> Vec<ScoreObs> {
        vec![obs(1.0, 0.0, 0.5, 1.0, 3.0), obs(1.0, 0.0, -0.5, 1.0, 1.0)]
    }

    #[test]
    fn fixture_variance_is_one() {
        let s = fixture();
        assert_eq!(variance_eif(&s, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn identical_rows_have_zero_variance() {
        let s = vec![obs(1.0, 0.0, 0.5, 1.0, 2.0); 5];
        assert_eq!(variance_eif(&s, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn single_fold_dml_variance_matches_eif_for_ate() {
        let s = fixture();
        let eif = variance_eif(&s, 2.0).unwrap();
        let dml = variance_dml(&[s], 2.0).unwrap();
        assert_eq!(eif, dml);
    }

    #[test]
    fn fixture_ci_half_width() {
        let s = fixture();
        let sigma2 = variance_dml(&[s], 2.0).unwrap();
        let (lo, hi) = wald_ci(2.0, sigma2, 2, 0.05).unwrap();
        let half = (hi - lo) / 2.0;
        assert!((half - 1.959964 / 2.0f64.sqrt()).abs() < 1e-5, "{half}");
        assert!((lo + hi) / 2.0 - 2.0 < 1e-12);
    }

    #[test]
    fn ate_j_is_exactly_one() {
        // Unequal folds, but every d_val is 1.
        let f1 = vec![obs(1.0, 0.0, 0.2, 0.0, 1.5); 3];
        let f2 = vec![obs(1.0, 0.0, -0.1, 0.0, 0.5); 5];
        let gamma = 1.0;
        let sigma2 = variance_dml(&[f1.clone(), f2.clone()], gamma).unwrap();
        // J = 1, so sigma2 is the fold-averaged mean of (psi - gamma)^2.
        let m1 = 0.25;
        let m2 = 0.25;
        assert!((sigma2 - (m1 + m2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn wald_interval_properties() {
        let (lo, hi) = wald_ci(1.0, 0.0, 10, 0.05).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        let (lo4, hi4) = wald_ci(0.0, 1.0, 4, 0.05).unwrap();
        let (lo16, hi16) = wald_ci(0.0, 1.0, 16, 0.05).unwrap();
        assert!(((hi4 - lo4) / (hi16 - lo16) - 2.0).abs() < 1e-12);
        // Nesting: the 99% interval contains the 95% interval.
        let narrow = wald_ci(0.0, 1.0, 4, 0.05).unwrap();
        let wide = wald_ci(0.0, 1.0, 4, 0.01).unwrap();
        assert!(wide.0 < narrow.0 && narrow.1 < wide.1);
        assert!(wald_ci(0.0, -1.0, 4, 0.05).is_err());
        assert!(wald_ci(0.0, 1.0, 4, 1.5).is_err());
        assert!(wald_ci(0.0, 1.0, 0, 0.05).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let single = [(2.0, 0.5)];
        assert_eq!(
            aggregate_splits(&single, Aggregation::Single).unwrap(),
            (2.0, 0.5)
        );
        assert_eq!(
            aggregate_splits(&single, Aggregation::Mean).unwrap(),
            (2.0, 0.5)
        );
        assert_eq!(
            aggregate_splits(&single, Aggregation::Median).unwrap(),
            (2.0, 0.5)
        );

        let three = [(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)];
        let (g, s2) = aggregate_splits(&three, Aggregation::Mean).unwrap();
        assert_eq!(g, 2.0);
        assert!((s2 - 2.0 / 3.0).abs() < 1e-15);

        let outlier = [(1.0, 0.0), (2.0, 0.0), (100.0, 0.0)];
        let (g, _) = aggregate_splits(&outlier, Aggregation::Median).unwrap();
        assert_eq!(g, 2.0);

        // Constant splits keep the common variance under both strategies.
        let constant = [(1.5, 0.75), (1.5, 0.75), (1.5, 0.75)];
        for strat in [Aggregation::Mean, Aggregation::Median] {
            let (g, s2) = aggregate_splits(&constant, strat).unwrap();
            assert_eq!((g, s2), (1.5, 0.75));
        }
        assert!(aggregate_splits(&[], Aggregation::Mean).is_err());
        assert!(aggregate_splits(&three, Aggregation::Single).is_err());
    }

    #[test]
    fn known_ps_matches_eif_when_slope_vanishes() {
        let s = fixture();
        assert_eq!(
            variance_known_ps(&s, 2.0).unwrap(),
            variance_eif(&s, 2.0).unwrap()
        );
        assert_eq!(efficiency_gain(&s, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_tau_at_gamma_kills_the_gain() {
        // Overlap-style weights with slope, but tau_hat equal to gamma.
        let s = vec![
            obs(0.25, 0.2, 0.5, 2.0, 2.5),
            obs(0.24, -0.1, -0.4, 2.0, 1.5),
        ];
        assert_eq!(efficiency_gain(&s, 2.0).unwrap(), 0.0);
        let with_hetero = vec![
            obs(0.25, 0.2, 0.5, 3.0, 2.5),
            obs(0.24, -0.1, -0.4, 1.0, 1.5),
        ];
        assert!(efficiency_gain(&with_hetero, 2.0).unwrap() > 0.0);
    }

    #[test]
    fn variances_are_non_negative() {
        let s = vec![
            obs(0.25, 0.2, 0.5, 3.0, 2.5),
            obs(0.24, -0.1, -0.4, 1.0, 1.5),
            obs(0.21, 0.3, 0.7, -1.0, 0.5),
        ];
        for g in [-2.0, 0.0, 1.7] {
            assert!(variance_eif(&s, g).unwrap() >= 0.0);
            assert!(variance_dml(std::slice::from_ref(&s), g).unwrap() >= 0.0);
            assert!(variance_known_ps(&s, g).unwrap() >= 0.0);
            assert!(efficiency_gain(&s, g).unwrap() >= 0.0);
            assert!(variance_naive_comparison_only(&s, g, false).unwrap() >= 0.0);
            assert!(variance_naive_comparison_only(&s, g, true).unwrap() >= 0.0);
        }
    }

    #[test]
    fn degenerate_denominators_are_reported() {
        let s = vec![obs(1.0, 0.0, 0.0, 0.0, 1.0), {
            let mut o = obs(1.0, 0.0, 0.0, 0.0, 1.0);
            o.d_val = -1.0;
            o
        }];
        assert!(matches!(variance_eif(&s, 1.0), Err(Error::Degenerate(_))));
        assert!(matches!(variance_dml(&[s], 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn aggregation_names_round_trip() {
        for a in [Aggregation::Single, Aggregation::Mean, Aggregation::Median] {
            let parsed: Aggregation = a.to_string().parse().unwrap();
            assert_eq!(parsed, a);
        }
        assert!("mode".parse::<Aggregation>().is_err());
    }
}
