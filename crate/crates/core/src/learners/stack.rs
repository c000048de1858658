//! Stacked ensemble: convex weights over member learners, chosen by
//! cross-validated loss.
//!
//! Member weights minimize out-of-fold loss (squared error for means, log
//! loss for probabilities) over the probability simplex, solved by projected
//! gradient descent with a backtracking step. Members start at uniform
//! weight, so symmetric members keep symmetric weights. A member that fails
//! on every CV fold is an error; one that fails on some folds is dropped
//! with zero weight.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{fit_model, FittedModel, StackParams, Task};
use crate::rng::Stream;
use crate::split::deal_folds;

const MAX_ITER: usize = 500;
const STEP_SHRINK: f64 = 0.5;
const SUFFICIENT_DECREASE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct StackModel {
    members: Vec<FittedModel>,
    weights: Vec<f64>,
    member_labels: Vec<String>,
    all_weights: Vec<f64>,
}

fn loss(task: Task, combined: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match task {
        Task::Mean => {
            combined
                .iter()
                .zip(y)
                .map(|(q, yi)| (q - yi) * (q - yi))
                .sum::<f64>()
                / n
        }
        Task::Probability => {
            -combined
                .iter()
                .zip(y)
                .map(|(q, yi)| {
                    let q = q.clamp(1e-12, 1.0 - 1e-12);
                    yi * q.ln() + (1.0 - yi) * (1.0 - q).ln()
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Gradient of the loss with respect to the member weights; `preds` is
/// row-major n×m.
fn gradient(task: Task, preds: &[f64], m: usize, combined: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut g = vec![0.0f64; m];
    for i in 0..n {
        let scale = match task {
            Task::Mean => 2.0 * (combined[i] - y[i]),
            Task::Probability => {
                let q = combined[i].clamp(1e-12, 1.0 - 1e-12);
                (q - y[i]) / (q * (1.0 - q))
            }
        };
        for j in 0..m {
            g[j] += scale * preds[i * m + j];
        }
    }
    for gj in &mut g {
        *gj /= n as f64;
    }
    g
}

fn combine(preds: &[f64], m: usize, w: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..m).map(|j| w[j] * preds[i * m + j]).sum();
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let candidate = (css - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&vi| (vi - theta).max(0.0)).collect()
}

/// Minimizes the stacking loss over the simplex starting from uniform
/// weights.
pub(crate) fn optimize_weights(preds: &[f64], m: usize, y: &[f64], task: Task) -> Vec<f64> {
    let n = y.len();
    debug_assert_eq!(preds.len(), n * m);
    let mut w = vec![1.0 / m as f64; m];
    let mut combined = vec![0.0f64; n];
    combine(preds, m, &w, &mut combined);
    let mut f = loss(task, &combined, y);

    // Backtracking start: inverse of a cheap curvature bound.
    let mean_sq: f64 = preds.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let curvature = match task {
        Task::Mean => 2.0 * mean_sq,
        Task::Probability => 200.0 * mean_sq,
    };
    let step_init = 1.0 / (curvature + 1e-12);

    let mut step = step_init;
    for _ in 0..MAX_ITER {
        let g = gradient(task, preds, m, &combined, y);
        step = (step * 2.0).min(step_init.max(1.0));
        let mut moved = false;
        for _ in 0..60 {
            let shifted: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let candidate = project_simplex(&shifted);
            let dist_sq: f64 = candidate
                .iter()
                .zip(&w)
                .map(|(c, wi)| (c - wi) * (c - wi))
                .sum();
            if dist_sq == 0.0 {
                break;
            }
            let mut cand_combined = vec![0.0f64; n];
            combine(preds, m, &candidate, &mut cand_combined);
            let cand_f = loss(task, &cand_combined, y);
            if cand_f <= f - SUFFICIENT_DECREASE * dist_sq / step {
                w = candidate;
                combined = cand_combined;
                f = cand_f;
                moved = true;
                break;
            }
            step *= STEP_SHRINK;
        }
        if !moved {
            break;
        }
    }
    w
}

pub(crate) fn fit(
    d: &Dataset,
    rows: &[usize],
    targets: &[f64],
    task: Task,
    params: &StackParams,
    stream: &Stream,
) -> Result<StackModel> {
    let n = rows.len();
    let m = params.members.len();
    if n < 2 * params.cv_folds {
        return Err(Error::Data(format!(
            "{n} training rows are too few for {}-fold stacking",
            params.cv_folds
        )));
    }
    let mut cv_rng = stream.child("stack-cv", 0).rng();
    let folds = deal_folds(n, params.cv_folds, &mut cv_rng);

    // Out-of-fold predictions per member; a member failing on every fold is
    // an error, a partial failure drops the member.
    let mut oof: Vec<Option<Vec<f64>>> = Vec::with_capacity(m);
    for (j, member) in params.members.iter().enumerate() {
        let member_stream = stream.child("stack-member", j as u64);
        let mut preds = vec![f64::NAN; n];
        let mut failed = 0usize;
        let mut last_err = None;
        for fold in 0..params.cv_folds as u32 {
            let train: Vec<usize> = (0..n)
                .filter(|&i| folds[i] != fold)
                .map(|i| rows[i])
                .collect();
            let hold: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
            let train_targets: Vec<f64> = (0..n)
                .filter(|&i| folds[i] != fold)
                .map(|i| targets[i])
                .collect();
            let hold_rows: Vec<usize> = hold.iter().map(|&i| rows[i]).collect();
            let result = fit_model(
                d,
                &train,
                &train_targets,
                task,
                member,
                &member_stream.child("fold", fold as u64),
            )
            .and_then(|model| model.predict(d, &hold_rows));
            match result {
                Ok(values) => {
                    for (local, v) in hold.iter().zip(values) {
                        preds[*local] = v;
                    }
                }
                Err(e) => {
                    failed += 1;
                    last_err = Some(e);
                }
            }
        }
        if failed == params.cv_folds {
            return Err(Error::Degenerate(format!(
                "stack member '{}' failed on every cross-validation fold: {}",
                member.label(),
                last_err.unwrap()
            )));
        }
        oof.push(if failed == 0 { Some(preds) } else { None });
    }

    let usable: Vec<usize> = (0..m).filter(|&j| oof[j].is_some()).collect();
    if usable.is_empty() {
        return Err(Error::Degenerate(
            "no stack member survived cross-validation".into(),
        ));
    }

    let mut flat = vec![0.0f64; n * usable.len()];
    for (c, &j) in usable.iter().enumerate() {
        let preds = oof[j].as_ref().unwrap();
        for i in 0..n {
            flat[i * usable.len() + c] = preds[i];
        }
    }
    let weights = optimize_weights(&flat, usable.len(), targets, task);

    let mut members = Vec::with_capacity(usable.len());
    for &j in &usable {
        members.push(fit_model(
            d,
            rows,
            targets,
            task,
            &params.members[j],
            &stream.child("stack-refit", j as u64),
        )?);
    }
    let member_labels: Vec<String> = params.members.iter().map(|s| s.label()).collect();
    let mut all_weights = vec![0.0f64; m];
    for (c, &j) in usable.iter().enumerate() {
        all_weights[j] = weights[c];
    }
    Ok(StackModel {
        members,
        weights,
        member_labels,
        all_weights,
    })
}

impl StackModel {
    pub fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0f64; rows.len()];
        for (member, &w) in self.members.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(member.predict(d, rows)?) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Weights aligned with the declared member list; dropped members hold
    /// zero.
    pub fn member_weights(&self) -> Vec<(String, f64)> {
        self.member_labels
            .iter()
            .cloned()
            .zip(self.all_weights.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerSpec, OracleSource};
    use ndarray::Array2;
    use std::sync::Arc;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn projection_lands_on_the_simplex() {
        let w = project_simplex(&[0.4, 0.9, -0.3]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v >= 0.0));
        let w = project_simplex(&[5.0, 0.0]);
        assert_eq!(w, vec![1.0, 0.0]);
        let w = project_simplex(&[0.25, 0.25]);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_members_keep_uniform_weights() {
        let n = 50;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut flat = vec![0.0f64; n * 2];
        for i in 0..n {
            let p = y[i] + 0.1;
            flat[i * 2] = p;
            flat[i * 2 + 1] = p;
        }
        let w = optimize_weights(&flat, 2, &y, Task::Mean);
        assert!(
            (w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12,
            "{w:?}"
        );
    }

    #[test]
    fn the_better_member_takes_the_weight() {
        let n = 200;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut flat = vec![0.0f64; n * 2];
        for i in 0..n {
            flat[i * 2] = y[i];
            flat[i * 2 + 1] = y[i] + if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let w = optimize_weights(&flat, 2, &y, Task::Mean);
        assert!(w[0] > 0.99, "{w:?}");
    }

    #[test]
    fn oracle_member_dominates_a_noise_member() {
        // The true propensity depends on a hidden signal; the logistic
        // member only sees an unrelated covariate.
        let n = 2000;
        let mut xv = Vec::with_capacity(n);
        let mut e_true = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            let hidden = ((i * 83) % 197) as f64 / 197.0 * 4.0 - 2.0;
            let visible = ((i * 61) % 211) as f64 / 211.0 * 4.0 - 2.0;
            let e = sigmoid(2.0 * hidden);
            let u = (((i * 137) % 1000) as f64 + 0.5) / 1000.0;
            xv.push(visible);
            e_true.push(e);
            a.push(if u < e { 1u8 } else { 0u8 });
        }
        let x = Array2::from_shape_vec((n, 1), xv).unwrap();
        let y = vec![0.0f64; n];
        let d = Dataset::from_parts(x, a.clone(), y).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let targets: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let params = StackParams {
            members: vec![
                LearnerSpec::Oracle(OracleSource::Values(Arc::new(e_true))),
                LearnerSpec::Logistic,
            ],
            cv_folds: 5,
        };
        let model = fit(
            &d,
            &rows,
            &targets,
            Task::Probability,
            &params,
            &Stream::root(11),
        )
        .unwrap();
        let weights = model.member_weights();
        assert!(weights[0].1 >= 0.99, "{weights:?}");
        let preds = model.predict(&d, &rows).unwrap();
        assert!(preds.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn member_failing_every_fold_is_named() {
        let n = 40;
        let x = Array2::from_shape_vec((n, 1), (0..n).map(|v| v as f64).collect()).unwrap();
        let a: Vec<u8> = (0..n).map(|v| (v % 2) as u8).collect();
        let d = Dataset::from_parts(x, a.clone(), vec![0.0; n]).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let targets: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let params = StackParams {
            members: vec![
                LearnerSpec::Logistic,
                LearnerSpec::Oracle(OracleSource::Column("nope".into())),
            ],
            cv_folds: 4,
        };
        let err = fit(
            &d,
            &rows,
            &targets,
            Task::Probability,
            &params,
            &Stream::root(3),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("oracle:nope"), "{err}");
    }

    #[test]
    fn too_few_rows_for_cv_is_rejected() {
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = Dataset::from_parts(x, vec![0, 1, 0, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let params = StackParams {
            members: vec![LearnerSpec::Logistic, LearnerSpec::Logistic],
            cv_folds: 5,
        };
        let err = fit(
            &d,
            &[0, 1, 2, 3],
            &[0.0, 1.0, 0.0, 1.0],
            Task::Probability,
            &params,
            &Stream::root(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
