//! Estimate report rows and their CSV/JSON rendering.
//!
//! JSON carries full round-trip precision and the per-split detail; CSV is
//! the summary table, one row per (estimand, method), with floats printed to
//! 6 significant digits.

use crate::error::Result;
use crate::estimators::Method;
use crate::inference::Aggregation;
use crate::weights::Estimand;
use serde::Serialize;

/// One split's point estimate and variance. `sigma2` is absent for methods
/// whose variance is not estimated (the plug-in estimators without the
/// comparison-only flag).
#[derive(Debug, Clone, Serialize)]
pub struct SplitEstimate {
    pub split: usize,
    pub gamma: f64,
    pub sigma2: Option<f64>,
}

/// One (estimand, method) result: point estimate, standard error, Wald
/// interval, split detail, and run-shape metadata.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    #[serde(serialize_with = "estimand_name")]
    pub estimand: Estimand,
    pub method: Method,
    pub gamma_hat: f64,
    /// Standard error of the estimate, sqrt(sigma2 / n).
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub alpha: f64,
    pub n: usize,
    pub k_folds: usize,
    pub n_splits: usize,
    pub aggregation: Aggregation,
    pub per_split: Vec<SplitEstimate>,
    /// Propensity predictions moved to the clip boundary, totalled over
    /// every nuisance fit behind this row.
    pub clipped: usize,
    pub clip: (f64, f64),
    pub learners: LearnerLabels,
    pub warnings: Vec<String>,
}

/// Labels of the learner triple that produced the nuisance fits.
#[derive(Debug, Clone, Serialize)]
pub struct LearnerLabels {
    pub propensity: String,
    pub outcome0: String,
    pub outcome1: String,
}

pub(crate) fn estimand_name<S: serde::Serializer>(
    e: &Estimand,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

/// Rounds to 6 significant digits, then prints the shortest decimal that
/// round-trips the rounded value.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap();
    format!("{rounded}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

pub const CSV_HEADER: [&str; 13] = [
    "estimand",
    "method",
    "gamma_hat",
    "se",
    "ci_lo",
    "ci_hi",
    "alpha",
    "n",
    "k_folds",
    "n_splits",
    "aggregation",
    "clipped",
    "warnings",
];

impl EstimateReport {
    fn csv_record(&self) -> Vec<String> {
        vec![
            self.estimand.to_string(),
            self.method.to_string(),
            fmt_sig6(self.gamma_hat),
            fmt_opt(self.se),
            fmt_opt(self.ci_lo),
            fmt_opt(self.ci_hi),
            fmt_sig6(self.alpha),
            self.n.to_string(),
            self.k_folds.to_string(),
            self.n_splits.to_string(),
            self.aggregation.to_string(),
            self.clipped.to_string(),
            self.warnings.join("; "),
        ]
    }
}

/// Renders the summary table. Per-split detail is JSON-only.
pub fn reports_to_csv(reports: &[EstimateReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |e: csv::Error| crate::Error::Data(format!("CSV render error: {e}"));
    w.write_record(CSV_HEADER).map_err(write)?;
    for r in reports {
        w.write_record(r.csv_record()).map_err(write)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Data(format!("CSV render error: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Pretty JSON array of report rows at full precision.
pub fn reports_to_json(reports: &[EstimateReport]) -> Result<String> {
    serde_json::to_string_pretty(reports)
        .map_err(|e| crate::Error::Data(format!("JSON render error: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig6(1.959963984540054), "1.95996");
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(-0.000123456789), "-0.000123457");
        assert_eq!(fmt_sig6(1234567.0), "1234570");
        assert_eq!(fmt_sig6(2.0), "2");
        assert_eq!(fmt_sig6(f64::NAN), "NaN");
    }

    fn sample_report() -> EstimateReport {
        EstimateReport {
            estimand: Estimand::Ato,
            method: Method::Dml2,
            gamma_hat: 1.2345678901,
            se: Some(0.25),
            ci_lo: Some(0.7445678),
            ci_hi: Some(1.7245678),
            alpha: 0.05,
            n: 400,
            k_folds: 5,
            n_splits: 2,
            aggregation: Aggregation::Mean,
            per_split: vec![
                SplitEstimate {
                    split: 0,
                    gamma: 1.2,
                    sigma2: Some(25.0),
                },
                SplitEstimate {
                    split: 1,
                    gamma: 1.27,
                    sigma2: Some(24.0),
                },
            ],
            clipped: 3,
            clip: (0.01, 0.99),
            learners: LearnerLabels {
                propensity: "logistic".into(),
                outcome0: "linear".into(),
                outcome1: "linear".into(),
            },
            warnings: vec!["3 propensity predictions clipped to [0.01, 0.99]".into()],
        }
    }

    #[test]
    fn csv_and_json_agree_to_csv_precision() {
        let reports = vec![sample_report()];
        let csv_text = reports_to_csv(&reports).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "ATO");
        assert_eq!(row[1], "dml2");

        let json_text = reports_to_json(&reports).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json_text).unwrap();
        let obj = &parsed[0];
        assert_eq!(obj["estimand"], "ATO");
        assert_eq!(obj["method"], "dml2");
        // CSV holds the JSON value rounded to 6 significant digits.
        let json_gamma = obj["gamma_hat"].as_f64().unwrap();
        assert_eq!(row[2], fmt_sig6(json_gamma));
        assert_eq!(json_gamma, 1.2345678901);
        assert_eq!(obj["per_split"].as_array().unwrap().len(), 2);
        assert_eq!(obj["per_split"][0]["sigma2"], 25.0);
    }

    #[test]
    fn absent_variance_leaves_empty_cells() {
        let mut r = sample_report();
        r.se = None;
        r.ci_lo = None;
        r.ci_hi = None;
        r.warnings.clear();
        let csv_text = reports_to_csv(&[r]).unwrap();
        let row = csv_text.lines().nth(1).unwrap();
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[3], "");
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "");
    }
}
