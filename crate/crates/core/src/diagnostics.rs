//! Covariate balance and propensity overlap diagnostics.
//!
//! Balance compares weighted covariate means between arms, where each arm is
//! reweighted toward the target population implied by an estimand: treated
//! rows get lambda(e)/e, control rows lambda(e)/(1-e). The gap is scaled by a
//! denominator shared across all weightings of the same covariate, so numbers
//! are comparable across columns of the table. Only covariates and treatment
//! are read; the outcome never enters.

use serde::Serialize;

use crate::data::Dataset;
use crate::learners::NuisanceFit;
use crate::report::{estimand_name, fmt_sig6};
use crate::util::{mean_c, quantile_sorted, variance_sample, CompensatedSum};
use crate::weights::Estimand;
use crate::{Error, Result};

/// Default cutoff above which a weighted standardized difference is flagged.
pub const DEFAULT_ASMD_THRESHOLD: f64 = 0.1;

/// Quantile levels (percent) reported by [`overlap_summary`].
pub const OVERLAP_QUANTILES: [f64; 5] = [1.0, 5.0, 50.0, 95.0, 99.0];

/// Mean and variance of one covariate in one arm. For weighted entries the
/// variance uses normalized weights, `sum(w (x - m)^2) / sum(w)`; for the raw
/// entries it is the plain sample variance.
#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub mean: f64,
    pub variance: f64,
}

/// Balance of one covariate under one estimand's tilting weights.
///
/// `asmd` is `None` when the shared denominator for this covariate is zero or
/// non-finite; such entries are reported, never turned into errors.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedBalance {
    #[serde(serialize_with = "estimand_name")]
    pub estimand: Estimand,
    pub treated: ArmSummary,
    pub control: ArmSummary,
    pub asmd: Option<f64>,
    pub flagged: bool,
}

/// Balance of one covariate: raw arm summaries, the shared standardization
/// denominator, the unweighted standardized difference, and one weighted
/// entry per requested estimand.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub treated: ArmSummary,
    pub control: ArmSummary,
    /// sqrt of the average of the two unweighted arm variances; every asmd in
    /// this row, weighted or not, divides by this same value.
    pub pooled_sd: f64,
    pub unweighted_asmd: Option<f64>,
    pub weighted: Vec<WeightedBalance>,
}

/// Balance table over all covariates, one row per column of X.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceTable {
    pub threshold: f64,
    pub estimands: Vec<String>,
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    /// True when any weighted standardized difference exceeds the threshold.
    pub fn any_flagged(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.weighted.iter().any(|w| w.flagged))
    }

    /// Long-format CSV: one record per (covariate, weighting) pair, with the
    /// raw arm summaries on the rows labelled `unweighted`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "covariate",
            "estimand",
            "treated_mean",
            "control_mean",
            "treated_variance",
            "control_variance",
            "pooled_sd",
            "asmd",
            "flagged",
        ])
        .map_err(csv_err)?;
        for row in &self.rows {
            write_balance_record(
                &mut w,
                &row.covariate,
                "unweighted",
                &row.treated,
                &row.control,
                row.pooled_sd,
                row.unweighted_asmd,
                false,
            )?;
            for wb in &row.weighted {
                write_balance_record(
                    &mut w,
                    &row.covariate,
                    &wb.estimand.to_string(),
                    &wb.treated,
                    &wb.control,
                    row.pooled_sd,
                    wb.asmd,
                    wb.flagged,
                )?;
            }
        }
        finish_csv(w)
    }

    /// Tidy (covariate, estimand, asmd) triples for plotting; raw rows carry
    /// the estimand label `unweighted`, not-applicable entries an empty cell.
    pub fn love_plot_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["covariate", "estimand", "asmd"])
            .map_err(csv_err)?;
        for row in &self.rows {
            w.write_record([
                row.covariate.as_str(),
                "unweighted",
                &opt_sig6(row.unweighted_asmd),
            ])
            .map_err(csv_err)?;
            for wb in &row.weighted {
                w.write_record([
                    row.covariate.as_str(),
                    &wb.estimand.to_string(),
                    &opt_sig6(wb.asmd),
                ])
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("JSON render error: {e}")))
    }
}

#[allow(clippy::too_many_arguments)]
fn write_balance_record<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    covariate: &str,
    estimand: &str,
    treated: &ArmSummary,
    control: &ArmSummary,
    pooled_sd: f64,
    asmd: Option<f64>,
    flagged: bool,
) -> Result<()> {
    w.write_record([
        covariate,
        estimand,
        &fmt_sig6(treated.mean),
        &fmt_sig6(control.mean),
        &fmt_sig6(treated.variance),
        &fmt_sig6(control.variance),
        &fmt_sig6(pooled_sd),
        &opt_sig6(asmd),
        if flagged { "true" } else { "false" },
    ])
    .map_err(csv_err)
}

fn opt_sig6(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("CSV render error: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("CSV render error: {e}")))
}

/// Computes the balance table for the given estimands.
///
/// Both arms must be non-empty. Predictions in `fit` must cover every row of
/// the dataset exactly once (a full-sample fit does; a single cross-fitting
/// fold does not). A non-positive pooled standard deviation for a covariate
/// makes all of that covariate's standardized differences not-applicable.
pub fn balance_table(
    d: &Dataset,
    fit: &NuisanceFit,
    estimands: &[Estimand],
    threshold: f64,
) -> Result<BalanceTable> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::Config(format!(
            "balance threshold must be finite and non-negative, got {threshold}"
        )));
    }
    let e_by_row = propensity_by_row(d, fit)?;
    let a = d.treatment();
    let n1 = d.n_treated();
    if n1 == 0 {
        return Err(Error::Data("treated arm empty".into()));
    }
    if n1 == d.n() {
        return Err(Error::Data("control arm empty".into()));
    }

    // Tilting weights depend only on the estimand and the fitted propensity,
    // so compute each weight vector once and reuse it for every covariate.
    let mut weight_sets = Vec::with_capacity(estimands.len());
    for w in estimands {
        let weights: Vec<f64> = a
            .iter()
            .zip(&e_by_row)
            .map(|(&ai, &e)| w.tilting(e, ai == 1))
            .collect::<Result<_>>()?;
        for (arm, treated) in [("treated", true), ("control", false)] {
            let total: f64 = sum_arm(a, &weights, treated, |_, wi| wi);
            if !(total.is_finite() && total > 0.0) {
                return Err(Error::Degenerate(format!(
                    "{w} tilting weights sum to {total} in the {arm} arm"
                )));
            }
        }
        weight_sets.push(weights);
    }

    let x = d.covariates();
    let mut rows = Vec::with_capacity(d.p());
    for (j, name) in d.covariate_names().iter().enumerate() {
        let col = x.column(j);
        let treated_vals: Vec<f64> = col
            .iter()
            .zip(a)
            .filter(|(_, &ai)| ai == 1)
            .map(|(&v, _)| v)
            .collect();
        let control_vals: Vec<f64> = col
            .iter()
            .zip(a)
            .filter(|(_, &ai)| ai == 0)
            .map(|(&v, _)| v)
            .collect();
        let treated = ArmSummary {
            mean: mean_c(&treated_vals),
            variance: variance_sample(&treated_vals),
        };
        let control = ArmSummary {
            mean: mean_c(&control_vals),
            variance: variance_sample(&control_vals),
        };
        let pooled_sd = (0.5 * (treated.variance + control.variance)).sqrt();
        let scale = if pooled_sd.is_finite() && pooled_sd > 0.0 {
            Some(pooled_sd)
        } else {
            None
        };
        let unweighted_asmd = scale.map(|s| (treated.mean - control.mean).abs() / s);

        let col_vec: Vec<f64> = col.to_vec();
        let weighted = estimands
            .iter()
            .zip(&weight_sets)
            .map(|(w, weights)| {
                let t = weighted_summary(a, &col_vec, weights, true);
                let c = weighted_summary(a, &col_vec, weights, false);
                let asmd = scale.map(|s| (t.mean - c.mean).abs() / s);
                let flagged = asmd.map(|v| v > threshold).unwrap_or(false);
                WeightedBalance {
                    estimand: *w,
                    treated: t,
                    control: c,
                    asmd,
                    flagged,
                }
            })
            .collect();

        rows.push(BalanceRow {
            covariate: name.clone(),
            treated,
            control,
            pooled_sd,
            unweighted_asmd,
            weighted,
        });
    }

    Ok(BalanceTable {
        threshold,
        estimands: estimands.iter().map(|w| w.to_string()).collect(),
        rows,
    })
}

fn sum_arm(a: &[u8], weights: &[f64], treated: bool, f: impl Fn(usize, f64) -> f64) -> f64 {
    let want = u8::from(treated);
    let mut acc = CompensatedSum::new();
    for (i, (&ai, &wi)) in a.iter().zip(weights).enumerate() {
        if ai == want {
            acc.add(f(i, wi));
        }
    }
    acc.value()
}

fn weighted_summary(a: &[u8], col: &[f64], weights: &[f64], treated: bool) -> ArmSummary {
    let total = sum_arm(a, weights, treated, |_, wi| wi);
    let mean = sum_arm(a, weights, treated, |i, wi| wi * col[i]) / total;
    let variance = sum_arm(a, weights, treated, |i, wi| {
        let dev = col[i] - mean;
        wi * dev * dev
    }) / total;
    ArmSummary { mean, variance }
}

/// Maps `fit` predictions back to dataset order, requiring exact coverage.
fn propensity_by_row(d: &Dataset, fit: &NuisanceFit) -> Result<Vec<f64>> {
    let n = d.n();
    if fit.rows.len() != n {
        return Err(Error::Config(format!(
            "fit predicts {} rows, dataset has {n}",
            fit.rows.len()
        )));
    }
    let mut e_by_row = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (&r, &e) in fit.rows.iter().zip(&fit.e_hat) {
        if r >= n {
            return Err(Error::Config(format!(
                "fit row index {r} out of range for n={n}"
            )));
        }
        if seen[r] {
            return Err(Error::Config(format!(
                "fit predicts row {r} more than once"
            )));
        }
        seen[r] = true;
        e_by_row[r] = e;
    }
    Ok(e_by_row)
}

/// Histogram and summary statistics of one arm's fitted propensities.
#[derive(Debug, Clone, Serialize)]
pub struct ArmOverlap {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    /// (percent, value) pairs at the levels in [`OVERLAP_QUANTILES`].
    pub quantiles: Vec<(f64, f64)>,
    /// Bin counts on the shared edges; sums to `n`.
    pub counts: Vec<usize>,
}

/// Side-by-side view of the fitted propensity distribution in each arm, on a
/// common grid spanning the clipping interval.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapSummary {
    /// Shared bin edges, `bins + 1` values from clip lo to clip hi.
    pub edges: Vec<f64>,
    pub treated: ArmOverlap,
    pub control: ArmOverlap,
    /// Predictions raised to the lower clip bound, across the whole sample.
    pub clipped_low: usize,
    /// Predictions lowered to the upper clip bound.
    pub clipped_high: usize,
}

impl OverlapSummary {
    /// Long-format CSV: histogram rows carry the bin edges, summary rows the
    /// statistic name, clipping rows the whole-sample counts.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["arm", "stat", "lo", "hi", "value"])
            .map_err(csv_err)?;
        for (arm, o) in [("treated", &self.treated), ("control", &self.control)] {
            w.write_record([arm, "n", "", "", &o.n.to_string()])
                .map_err(csv_err)?;
            w.write_record([arm, "min", "", "", &fmt_sig6(o.min)])
                .map_err(csv_err)?;
            w.write_record([arm, "max", "", "", &fmt_sig6(o.max)])
                .map_err(csv_err)?;
            for &(pct, v) in &o.quantiles {
                w.write_record([arm, "quantile", &fmt_sig6(pct), "", &fmt_sig6(v)])
                    .map_err(csv_err)?;
            }
            for (b, &count) in o.counts.iter().enumerate() {
                w.write_record([
                    arm,
                    "bin",
                    &fmt_sig6(self.edges[b]),
                    &fmt_sig6(self.edges[b + 1]),
                    &count.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.write_record(["all", "clipped_low", "", "", &self.clipped_low.to_string()])
            .map_err(csv_err)?;
        w.write_record([
            "all",
            "clipped_high",
            "",
            "",
            &self.clipped_high.to_string(),
        ])
        .map_err(csv_err)?;
        finish_csv(w)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("JSON render error: {e}")))
    }
}

/// Summarizes the fitted propensity distribution per arm on `bins` equal-width
/// bins spanning the fit's clipping interval. Requires at least two bins and a
/// fit covering every row; both arms must be non-empty.
pub fn overlap_summary(d: &Dataset, fit: &NuisanceFit, bins: usize) -> Result<OverlapSummary> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "overlap summary needs at least 2 bins, got {bins}"
        )));
    }
    let e_by_row = propensity_by_row(d, fit)?;
    let a = d.treatment();
    let n1 = d.n_treated();
    if n1 == 0 {
        return Err(Error::Data("treated arm empty".into()));
    }
    if n1 == d.n() {
        return Err(Error::Data("control arm empty".into()));
    }
    let (lo, hi) = (fit.clip.lo, fit.clip.hi);
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| lo + width * i as f64 / bins as f64)
        .collect();
    edges[bins] = hi;

    let arm = |treated: bool| -> ArmOverlap {
        let want = u8::from(treated);
        let mut vals: Vec<f64> = e_by_row
            .iter()
            .zip(a)
            .filter(|(_, &ai)| ai == want)
            .map(|(&e, _)| e)
            .collect();
        let mut counts = vec![0usize; bins];
        for &e in &vals {
            // Clipped predictions sit exactly on the interval ends, so clamp
            // the index instead of rejecting boundary values.
            let idx = (((e - lo) / width * bins as f64).floor() as isize)
                .clamp(0, bins as isize - 1) as usize;
            counts[idx] += 1;
        }
        vals.sort_unstable_by(f64::total_cmp);
        let quantiles = OVERLAP_QUANTILES
            .iter()
            .map(|&pct| (pct, quantile_sorted(&vals, pct / 100.0)))
            .collect();
        ArmOverlap {
            n: vals.len(),
            min: vals[0],
            max: vals[vals.len() - 1],
            quantiles,
            counts,
        }
    };

    Ok(OverlapSummary {
        edges,
        treated: arm(true),
        control: arm(false),
        clipped_low: fit.clipped_low,
        clipped_high: fit.clipped_high,
    })
}
