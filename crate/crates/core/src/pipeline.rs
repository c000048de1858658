//! End-to-end estimation runs: nuisance fitting, scoring, estimation,
//! variance, and multi-split aggregation for any set of estimands and
//! methods over one dataset.
//!
//! Nuisance fits are shared wherever the methods allow it: the plug-in and
//! full-sample estimators use one full fit, and both cross-fitted variants
//! reuse the same per-split fold fits. Splits run in parallel; results are
//! assembled by split index, so output is independent of worker count.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dml1, estimate_dml2, estimate_eif, estimate_naive1, estimate_naive2, FoldWeighting,
    Method,
};
use crate::inference::{
    aggregate_splits, variance_dml, variance_eif, variance_naive_comparison_only, wald_ci,
    Aggregation,
};
use crate::learners::{cross_fit_nuisances, fit_nuisances_full, Clip, NuisanceFit, NuisanceSpecs};
use crate::report::{EstimateReport, LearnerLabels, SplitEstimate};
use crate::rng::Stream;
use crate::scores::{score_components, ScoreObs};
use crate::split::make_split_plan;
use crate::weights::Estimand;
use rayon::prelude::*;

/// Run-shape settings shared by every (estimand, method) pair of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub k_folds: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub clip: Clip,
    pub alpha: f64,
    pub aggregation: Aggregation,
    pub fold_weighting: FoldWeighting,
    /// Attach the comparison-only mean-square variance to the plug-in
    /// estimators. Off by default; when on, every such row carries a
    /// validity warning.
    pub naive_variance: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            k_folds: 5,
            n_splits: 1,
            seed: 0,
            clip: Clip::default(),
            alpha: 0.05,
            aggregation: Aggregation::Mean,
            fold_weighting: FoldWeighting::Equal,
            naive_variance: false,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_splits == 0 {
            return Err(Error::Config("need at least one split".into()));
        }
        if self.aggregation == Aggregation::Single && self.n_splits != 1 {
            return Err(Error::Config(format!(
                "single-split aggregation is incompatible with {} splits; choose mean or median",
                self.n_splits
            )));
        }
        Ok(())
    }
}

const NAIVE_VARIANCE_WARNING: &str = "comparison-only variance: the plug-in estimators ignore \
     nuisance-estimation error, so this interval is not asymptotically valid";

fn clip_warning(clipped: usize, clip: Clip) -> Option<String> {
    if clipped == 0 {
        return None;
    }
    Some(format!(
        "{clipped} propensity prediction{} clipped to [{}, {}]",
        if clipped == 1 { "" } else { "s" },
        clip.lo,
        clip.hi
    ))
}

/// Scores for every requested estimand over one nuisance fit block.
fn scores_per_estimand(
    d: &Dataset,
    fit: &NuisanceFit,
    estimands: &[Estimand],
) -> Result<Vec<Vec<ScoreObs>>> {
    estimands
        .iter()
        .map(|w| score_components(d, fit, w))
        .collect()
}

struct SplitOutcome {
    /// Per estimand: (dml1 gamma, dml2 gamma, dml1 sigma2, dml2 sigma2).
    per_estimand: Vec<(f64, f64, f64, f64)>,
    clipped: usize,
}

fn run_split(
    d: &Dataset,
    plan: &crate::split::SplitPlan,
    split: usize,
    estimands: &[Estimand],
    specs: &NuisanceSpecs,
    settings: &RunSettings,
    stream: &Stream,
) -> Result<SplitOutcome> {
    let fits = cross_fit_nuisances(d, plan, split, specs, settings.clip, stream)?;
    let clipped = fits.iter().map(|f| f.clipped_low + f.clipped_high).sum();
    let mut per_estimand = Vec::with_capacity(estimands.len());
    for w in estimands {
        let fold_scores: Vec<Vec<ScoreObs>> = fits
            .iter()
            .map(|fit| score_components(d, fit, w))
            .collect::<Result<_>>()?;
        let d1 = estimate_dml1(&fold_scores, settings.fold_weighting)?;
        let d2 = estimate_dml2(&fold_scores)?;
        let v1 = variance_dml(&fold_scores, d1.gamma)?;
        let v2 = variance_dml(&fold_scores, d2.gamma)?;
        per_estimand.push((d1.gamma, d2.gamma, v1, v2));
    }
    Ok(SplitOutcome {
        per_estimand,
        clipped,
    })
}

/// Runs every requested (estimand, method) pair and returns one report row
/// per pair, ordered by the caller's estimand list, then method list.
pub fn estimate_all(
    d: &Dataset,
    estimands: &[Estimand],
    methods: &[Method],
    specs: &NuisanceSpecs,
    settings: &RunSettings,
) -> Result<Vec<EstimateReport>> {
    settings.validate()?;
    specs.validate()?;
    d.require_estimable()?;
    if estimands.is_empty() {
        return Err(Error::Config("no estimands requested".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let root = Stream::root(settings.seed);
    let need_full = methods.iter().any(|m| !m.is_cross_fitted());
    let need_cross = methods.iter().any(|m| m.is_cross_fitted());

    // One full-sample fit shared by the plug-in and full-sample estimators.
    let full = if need_full {
        let fit = fit_nuisances_full(d, specs, settings.clip, &root)?;
        let scores = scores_per_estimand(d, &fit, estimands)?;
        Some((fit, scores))
    } else {
        None
    };

    // Per-split cross-fits shared by both cross-fitted estimators, run in
    // parallel and collected in split order.
    let splits: Vec<SplitOutcome> = if need_cross {
        let plan = make_split_plan(d.n(), settings.k_folds, settings.n_splits, &root)?;
        (0..settings.n_splits)
            .into_par_iter()
            .map(|s| run_split(d, &plan, s, estimands, specs, settings, &root))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let cross_clipped: usize = splits.iter().map(|s| s.clipped).sum();

    let labels = LearnerLabels {
        propensity: specs.propensity.label(),
        outcome0: specs.outcome0.label(),
        outcome1: specs.outcome1.label(),
    };

    let mut reports = Vec::with_capacity(estimands.len() * methods.len());
    for (wi, w) in estimands.iter().enumerate() {
        for &method in methods {
            let report = if method.is_cross_fitted() {
                let pairs: Vec<(f64, f64)> = splits
                    .iter()
                    .map(|s| {
                        let (g1, g2, v1, v2) = s.per_estimand[wi];
                        match method {
                            Method::Dml1 => (g1, v1),
                            _ => (g2, v2),
                        }
                    })
                    .collect();
                let strategy = if settings.n_splits == 1 {
                    Aggregation::Single
                } else {
                    settings.aggregation
                };
                let (gamma_hat, sigma2) = aggregate_splits(&pairs, strategy)?;
                let (ci_lo, ci_hi) = wald_ci(gamma_hat, sigma2, d.n(), settings.alpha)?;
                let mut warnings: Vec<String> = w.warning().into_iter().collect();
                warnings.extend(clip_warning(cross_clipped, settings.clip));
                EstimateReport {
                    estimand: *w,
                    method,
                    gamma_hat,
                    se: Some((sigma2 / d.n() as f64).sqrt()),
                    ci_lo: Some(ci_lo),
                    ci_hi: Some(ci_hi),
                    alpha: settings.alpha,
                    n: d.n(),
                    k_folds: settings.k_folds,
                    n_splits: settings.n_splits,
                    aggregation: strategy,
                    per_split: pairs
                        .iter()
                        .enumerate()
                        .map(|(s, &(g, v))| SplitEstimate {
                            split: s,
                            gamma: g,
                            sigma2: Some(v),
                        })
                        .collect(),
                    clipped: cross_clipped,
                    clip: (settings.clip.lo, settings.clip.hi),
                    learners: labels.clone(),
                    warnings,
                }
            } else {
                let (fit, scores_by_estimand) = full
                    .as_ref()
                    .expect("full fit present for non-cross-fitted method");
                let scores = &scores_by_estimand[wi];
                let mut warnings: Vec<String> = w.warning().into_iter().collect();
                let clipped = fit.clipped_low + fit.clipped_high;
                warnings.extend(clip_warning(clipped, settings.clip));
                let (gamma_hat, sigma2) = match method {
                    Method::Naive1 => {
                        let g = estimate_naive1(scores)?;
                        let s2 = if settings.naive_variance {
                            warnings.push(NAIVE_VARIANCE_WARNING.into());
                            Some(variance_naive_comparison_only(scores, g, false)?)
                        } else {
                            None
                        };
                        (g, s2)
                    }
                    Method::Naive2 => {
                        let g = estimate_naive2(scores)?;
                        let s2 = if settings.naive_variance {
                            warnings.push(NAIVE_VARIANCE_WARNING.into());
                            Some(variance_naive_comparison_only(scores, g, true)?)
                        } else {
                            None
                        };
                        (g, s2)
                    }
                    _ => {
                        let g = estimate_eif(scores)?;
                        (g, Some(variance_eif(scores, g)?))
                    }
                };
                let ci = match sigma2 {
                    Some(s2) => Some(wald_ci(gamma_hat, s2, d.n(), settings.alpha)?),
                    None => None,
                };
                EstimateReport {
                    estimand: *w,
                    method,
                    gamma_hat,
                    se: sigma2.map(|s2| (s2 / d.n() as f64).sqrt()),
                    ci_lo: ci.map(|c| c.0),
                    ci_hi: ci.map(|c| c.1),
                    alpha: settings.alpha,
                    n: d.n(),
                    k_folds: 1,
                    n_splits: 1,
                    aggregation: Aggregation::Single,
                    per_split: vec![SplitEstimate {
                        split: 0,
                        gamma: gamma_hat,
                        sigma2,
                    }],
                    clipped,
                    clip: (settings.clip.lo, settings.clip.hi),
                    learners: labels.clone(),
                    warnings,
                }
            };
            reports.push(report);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// The two-row dataset with known nuisances: e = 1/2 everywhere,
    /// mu0 = 0, mu1 = 1.
    fn two_row() -> (Dataset, NuisanceSpecs) {
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 0.0]).unwrap();
        let d = Dataset::from_parts(x, vec![1, 0], vec![2.0, 0.0]).unwrap();
        let specs = NuisanceSpecs::oracle_values(vec![0.5, 0.5], vec![0.0, 0.0], vec![1.0, 1.0]);
        (d, specs)
    }

    #[test]
    fn two_row_fixture_end_to_end() {
        let (d, specs) = two_row();
        let settings = RunSettings {
            k_folds: 1,
            ..RunSettings::default()
        };
        let reports = estimate_all(
            &d,
            &[Estimand::Ate, Estimand::Ato],
            &[Method::Naive1, Method::Naive2, Method::Eif],
            &specs,
            &settings,
        )
        .unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            match r.method {
                Method::Naive1 => assert!((r.gamma_hat - 1.0).abs() < 1e-12),
                Method::Naive2 => assert!((r.gamma_hat - 2.0).abs() < 1e-12),
                Method::Eif => assert!((r.gamma_hat - 2.0).abs() < 1e-12),
                _ => unreachable!(),
            }
        }
        // ATE eif: sigma2 = 1, se = sqrt(1/2), CI half-width z/sqrt(2).
        let eif_ate = reports
            .iter()
            .find(|r| r.method == Method::Eif && r.estimand == Estimand::Ate)
            .unwrap();
        let se = eif_ate.se.unwrap();
        assert!((se - 0.5f64.sqrt()).abs() < 1e-12);
        let half = (eif_ate.ci_hi.unwrap() - eif_ate.ci_lo.unwrap()) / 2.0;
        assert!((half - 1.959964 * se).abs() < 1e-5);
        // Plug-in rows carry no variance without the comparison flag.
        for r in &reports {
            if matches!(r.method, Method::Naive1 | Method::Naive2) {
                assert!(r.se.is_none());
                assert!(r.ci_lo.is_none());
                assert!(r.warnings.is_empty());
            }
        }
    }

    #[test]
    fn naive_variance_flag_adds_warning() {
        let (d, specs) = two_row();
        let settings = RunSettings {
            naive_variance: true,
            ..RunSettings::default()
        };
        let reports =
            estimate_all(&d, &[Estimand::Ate], &[Method::Naive1], &specs, &settings).unwrap();
        let r = &reports[0];
        assert!(r.se.is_some());
        assert!(r.warnings.iter().any(|w| w.contains("comparison-only")));
    }

    fn synthetic(n: usize) -> Dataset {
        let mut xv = Vec::with_capacity(2 * n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let x1 = ((i * 83) % 197) as f64 / 197.0 * 4.0 - 2.0;
            let x2 = ((i * 61) % 211) as f64 / 211.0 * 4.0 - 2.0;
            let e = 1.0 / (1.0 + (-0.8 * x1).exp());
            let u = (((i * 137) % 1000) as f64 + 0.5) / 1000.0;
            let ai = if u < e { 1u8 } else { 0u8 };
            xv.push(x1);
            xv.push(x2);
            y.push(0.5 * x1 + x2 + 1.5 * ai as f64);
            a.push(ai);
        }
        Dataset::from_parts(Array2::from_shape_vec((n, 2), xv).unwrap(), a, y).unwrap()
    }

    #[test]
    fn cross_fitted_run_shapes_and_determinism() {
        let d = synthetic(120);
        let settings = RunSettings {
            k_folds: 3,
            n_splits: 4,
            seed: 11,
            ..RunSettings::default()
        };
        let run = || {
            estimate_all(
                &d,
                &[Estimand::Ato],
                &[Method::Eif, Method::Dml1, Method::Dml2],
                &NuisanceSpecs::glm(),
                &settings,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 3);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.gamma_hat, rb.gamma_hat);
            assert_eq!(ra.se, rb.se);
        }
        let dml1 = &a[1];
        assert_eq!(dml1.per_split.len(), 4);
        assert_eq!(dml1.k_folds, 3);
        assert_eq!(dml1.aggregation, Aggregation::Mean);
        let eif = &a[0];
        assert_eq!(eif.per_split.len(), 1);
        assert_eq!(eif.aggregation, Aggregation::Single);
        // The aggregated dml1 estimate matches a hand aggregation.
        let mean: f64 =
            dml1.per_split.iter().map(|s| s.gamma).sum::<f64>() / dml1.per_split.len() as f64;
        assert!((dml1.gamma_hat - mean).abs() < 1e-15);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let d = synthetic(90);
        let settings = RunSettings {
            k_folds: 3,
            n_splits: 3,
            seed: 7,
            ..RunSettings::default()
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| {
                estimate_all(
                    &d,
                    &[Estimand::Ate],
                    &[Method::Dml2],
                    &NuisanceSpecs::glm(),
                    &settings,
                )
                .unwrap()
            });
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| {
                estimate_all(
                    &d,
                    &[Estimand::Ate],
                    &[Method::Dml2],
                    &NuisanceSpecs::glm(),
                    &settings,
                )
                .unwrap()
            });
        assert_eq!(single[0].gamma_hat, many[0].gamma_hat);
        assert_eq!(single[0].se, many[0].se);
        assert_eq!(
            single[0]
                .per_split
                .iter()
                .map(|s| s.gamma)
                .collect::<Vec<_>>(),
            many[0]
                .per_split
                .iter()
                .map(|s| s.gamma)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn settings_validation() {
        let (d, specs) = two_row();
        let bad_alpha = RunSettings {
            alpha: 1.5,
            ..RunSettings::default()
        };
        assert!(matches!(
            estimate_all(&d, &[Estimand::Ate], &[Method::Eif], &specs, &bad_alpha),
            Err(Error::Config(_))
        ));
        let bad_agg = RunSettings {
            n_splits: 3,
            aggregation: Aggregation::Single,
            ..RunSettings::default()
        };
        assert!(matches!(
            estimate_all(&d, &[Estimand::Ate], &[Method::Dml1], &specs, &bad_agg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            estimate_all(&d, &[], &[Method::Eif], &specs, &RunSettings::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            estimate_all(&d, &[Estimand::Ate], &[], &specs, &RunSettings::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn atb_parameter_warning_reaches_the_report() {
        let (d, specs) = two_row();
        let w = Estimand::atb(1.5, 2.0).unwrap();
        let reports =
            estimate_all(&d, &[w], &[Method::Eif], &specs, &RunSettings::default()).unwrap();
        assert!(reports[0].warnings.iter().any(|m| m.contains("unstable")));
    }
}
