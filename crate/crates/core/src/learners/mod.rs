//! Nuisance-function learners: the propensity score e(X) and the
//! conditional outcome means mu0(X), mu1(X).
//!
//! Four fitted kinds (linear, logistic, each with optional pairwise
//! interactions, and boosted stumps), a stacked convex ensemble over them,
//! and oracle learners that return known values for testing and for
//! known-propensity analyses. Cross-fitting trains on each fold's complement
//! and predicts on the fold; the training rows are recorded as a digest so
//! honesty is auditable after the fact.

pub(crate) mod design;
mod gbt;
mod linear;
mod logistic;
mod stack;

pub use gbt::{GbtModel, GbtParams};
pub use linear::LinearModel;
pub use logistic::LogisticModel;
pub use stack::StackModel;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::split::SplitPlan;
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// What a model predicts: probabilities for the propensity score, means for
/// the outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Probability,
    Mean,
}

/// Where an oracle learner's values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSource {
    /// A covariate column of the dataset, by name.
    Column(String),
    /// Row-indexed values supplied directly (length covers the dataset).
    Values(Arc<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub members: Vec<LearnerSpec>,
    pub cv_folds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    Linear,
    LinearInteractions,
    Logistic,
    LogisticInteractions,
    GbtStumps(GbtParams),
    Oracle(OracleSource),
    Stack(StackParams),
}

impl LearnerSpec {
    pub fn gbt() -> Self {
        LearnerSpec::GbtStumps(GbtParams::default())
    }

    pub fn oracle_column(name: impl Into<String>) -> Self {
        LearnerSpec::Oracle(OracleSource::Column(name.into()))
    }

    pub fn oracle_values(values: Vec<f64>) -> Self {
        LearnerSpec::Oracle(OracleSource::Values(Arc::new(values)))
    }

    pub fn stack(members: Vec<LearnerSpec>) -> Self {
        LearnerSpec::Stack(StackParams {
            members,
            cv_folds: 5,
        })
    }

    /// Short provenance label; fitted-kind labels parse back via `FromStr`.
    pub fn label(&self) -> String {
        match self {
            LearnerSpec::Linear => "linear".into(),
            LearnerSpec::LinearInteractions => "linear-interactions".into(),
            LearnerSpec::Logistic => "logistic".into(),
            LearnerSpec::LogisticInteractions => "logistic-interactions".into(),
            LearnerSpec::GbtStumps(p) => format!("gbt:{},{}", p.rounds, p.learning_rate),
            LearnerSpec::Oracle(OracleSource::Column(c)) => format!("oracle:{c}"),
            LearnerSpec::Oracle(OracleSource::Values(_)) => "oracle:provided".into(),
            LearnerSpec::Stack(p) => {
                let members: Vec<String> = p.members.iter().map(|m| m.label()).collect();
                format!("stack({};cv={})", members.join("+"), p.cv_folds)
            }
        }
    }

    /// Checks the learner against the prediction task, recursing into stacks.
    pub fn validate_for(&self, task: Task) -> Result<()> {
        match self {
            LearnerSpec::Linear | LearnerSpec::LinearInteractions => {
                if task == Task::Probability {
                    return Err(Error::Config(format!(
                        "learner '{}' cannot model the propensity score; use a \
                         logistic, gbt, oracle, or stack learner",
                        self.label()
                    )));
                }
                Ok(())
            }
            LearnerSpec::Logistic | LearnerSpec::LogisticInteractions => {
                if task == Task::Mean {
                    return Err(Error::Config(format!(
                        "learner '{}' models probabilities, not outcome means; use a \
                         linear, gbt, oracle, or stack learner",
                        self.label()
                    )));
                }
                Ok(())
            }
            LearnerSpec::GbtStumps(p) => p.validate(),
            LearnerSpec::Oracle(_) => Ok(()),
            LearnerSpec::Stack(p) => {
                if p.members.len() < 2 {
                    return Err(Error::Config("stack needs at least 2 members".into()));
                }
                if p.cv_folds < 2 {
                    return Err(Error::Config(
                        "stack cross-validation needs at least 2 folds".into(),
                    ));
                }
                for m in &p.members {
                    if matches!(m, LearnerSpec::Stack(_)) {
                        return Err(Error::Config("stacks cannot nest".into()));
                    }
                    m.validate_for(task)?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for LearnerSpec {
    type Err = Error;

    /// Accepts `linear`, `linear-interactions`, `logistic`,
    /// `logistic-interactions`, `gbt`, `gbt:ROUNDS,RATE`, `oracle:COLUMN`,
    /// and `stack(MEMBER+MEMBER;cv=K)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "linear" => return Ok(LearnerSpec::Linear),
            "linear-interactions" => return Ok(LearnerSpec::LinearInteractions),
            "logistic" => return Ok(LearnerSpec::Logistic),
            "logistic-interactions" => return Ok(LearnerSpec::LogisticInteractions),
            "gbt" => return Ok(LearnerSpec::gbt()),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("gbt:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() == 2 {
                if let (Ok(rounds), Ok(learning_rate)) =
                    (parts[0].parse::<usize>(), parts[1].parse::<f64>())
                {
                    let params = GbtParams {
                        rounds,
                        learning_rate,
                    };
                    params.validate()?;
                    return Ok(LearnerSpec::GbtStumps(params));
                }
            }
            return Err(Error::Config(format!(
                "cannot parse '{s}': expected gbt:ROUNDS,RATE"
            )));
        }
        if let Some(column) = s
            .strip_prefix("oracle:")
            .or_else(|| s.strip_prefix("ORACLE:"))
        {
            if column.is_empty() {
                return Err(Error::Config("oracle learner needs a column name".into()));
            }
            return Ok(LearnerSpec::oracle_column(column.trim()));
        }
        if let Some(inner) = lower
            .strip_prefix("stack(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let (member_part, cv_folds) = match inner.split_once(";cv=") {
                Some((m, k)) => {
                    let k = k.parse::<usize>().map_err(|_| {
                        Error::Config(format!("cannot parse stack fold count '{k}'"))
                    })?;
                    (m, k)
                }
                None => (inner, 5),
            };
            let members = member_part
                .split('+')
                .map(LearnerSpec::from_str)
                .collect::<Result<Vec<_>>>()?;
            return Ok(LearnerSpec::Stack(StackParams { members, cv_folds }));
        }
        Err(Error::Config(format!(
            "unknown learner '{s}'; valid forms: linear, linear-interactions, logistic, \
             logistic-interactions, gbt, gbt:ROUNDS,RATE, oracle:COLUMN, \
             stack(MEMBER+MEMBER;cv=K)"
        )))
    }
}

/// A fitted model of any kind, ready to predict on dataset rows.
#[derive(Debug, Clone)]
pub struct FittedModel {
    label: String,
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Gbt(GbtModel),
    Oracle(OracleSource),
    Stack(StackModel),
}

impl FittedModel {
    pub fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
        match &self.inner {
            Inner::Linear(m) => Ok(m.predict(d, rows)),
            Inner::Logistic(m) => Ok(m.predict(d, rows)),
            Inner::Gbt(m) => Ok(m.predict(d, rows)),
            Inner::Oracle(OracleSource::Column(name)) => {
                let values = d.column_values(name).ok_or_else(|| {
                    Error::Data(format!("oracle column '{name}' not found in dataset"))
                })?;
                Ok(rows.iter().map(|&r| values[r]).collect())
            }
            Inner::Oracle(OracleSource::Values(values)) => {
                if let Some(&r) = rows.iter().find(|&&r| r >= values.len()) {
                    return Err(Error::Data(format!(
                        "oracle values cover {} rows, row {r} requested",
                        values.len()
                    )));
                }
                Ok(rows.iter().map(|&r| values[r]).collect())
            }
            Inner::Stack(m) => m.predict(d, rows),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Member weights when this model is a stack.
    pub fn stack_weights(&self) -> Option<Vec<(String, f64)>> {
        match &self.inner {
            Inner::Stack(m) => Some(m.member_weights()),
            _ => None,
        }
    }
}

/// Kind dispatch shared by the public entry points and by stack members.
pub(crate) fn fit_model(
    d: &Dataset,
    rows: &[usize],
    targets: &[f64],
    task: Task,
    spec: &LearnerSpec,
    stream: &Stream,
) -> Result<FittedModel> {
    let inner = match spec {
        LearnerSpec::Linear => Inner::Linear(linear::fit(d, rows, targets, false)?),
        LearnerSpec::LinearInteractions => Inner::Linear(linear::fit(d, rows, targets, true)?),
        LearnerSpec::Logistic => Inner::Logistic(logistic::fit(d, rows, targets, false)?),
        LearnerSpec::LogisticInteractions => {
            Inner::Logistic(logistic::fit(d, rows, targets, true)?)
        }
        LearnerSpec::GbtStumps(params) => {
            let loss = match task {
                Task::Probability => gbt::Loss::Logit,
                Task::Mean => gbt::Loss::Squared,
            };
            Inner::Gbt(gbt::fit(d, rows, targets, loss, params)?)
        }
        LearnerSpec::Oracle(source) => Inner::Oracle(source.clone()),
        LearnerSpec::Stack(params) => {
            Inner::Stack(stack::fit(d, rows, targets, task, params, stream)?)
        }
    };
    Ok(FittedModel {
        label: spec.label(),
        inner,
    })
}

/// Fits a propensity model on the given training rows.
pub fn fit_propensity(
    d: &Dataset,
    rows: &[usize],
    spec: &LearnerSpec,
    stream: &Stream,
) -> Result<FittedModel> {
    spec.validate_for(Task::Probability)?;
    let treated = rows.iter().filter(|&&r| d.treatment()[r] == 1).count();
    if treated == 0 || treated == rows.len() {
        return Err(Error::Data(format!(
            "propensity training rows contain a single arm ({treated} of {} treated)",
            rows.len()
        )));
    }
    let targets: Vec<f64> = rows.iter().map(|&r| d.treatment()[r] as f64).collect();
    fit_model(d, rows, &targets, Task::Probability, spec, stream)
}

/// Fits an outcome model for one arm; training rows are filtered to that
/// arm before fitting.
pub fn fit_outcome(
    d: &Dataset,
    rows: &[usize],
    arm: u8,
    spec: &LearnerSpec,
    stream: &Stream,
) -> Result<FittedModel> {
    spec.validate_for(Task::Mean)?;
    let arm_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&r| d.treatment()[r] == arm)
        .collect();
    if arm_rows.is_empty() {
        return Err(Error::Data(format!(
            "no rows in arm {arm} among the training rows"
        )));
    }
    let targets: Vec<f64> = arm_rows.iter().map(|&r| d.outcome()[r]).collect();
    fit_model(d, &arm_rows, &targets, Task::Mean, spec, stream)
}

/// Propensity clipping interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Clip {
    fn default() -> Self {
        Clip { lo: 0.01, hi: 0.99 }
    }
}

impl Clip {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(Error::Config(format!(
                "clip interval must satisfy 0 < lo < hi < 1, got ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn apply(&self, e: f64) -> f64 {
        e.clamp(self.lo, self.hi)
    }
}

/// The learner triple used for one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSpecs {
    pub propensity: LearnerSpec,
    pub outcome0: LearnerSpec,
    pub outcome1: LearnerSpec,
}

impl NuisanceSpecs {
    /// Logistic propensity, per-arm linear outcomes.
    pub fn glm() -> Self {
        NuisanceSpecs {
            propensity: LearnerSpec::Logistic,
            outcome0: LearnerSpec::Linear,
            outcome1: LearnerSpec::Linear,
        }
    }

    /// GLMs with all pairwise covariate interactions.
    pub fn glm_interactions() -> Self {
        NuisanceSpecs {
            propensity: LearnerSpec::LogisticInteractions,
            outcome0: LearnerSpec::LinearInteractions,
            outcome1: LearnerSpec::LinearInteractions,
        }
    }

    /// Oracle learners over directly supplied truth vectors.
    pub fn oracle_values(e: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>) -> Self {
        NuisanceSpecs {
            propensity: LearnerSpec::oracle_values(e),
            outcome0: LearnerSpec::oracle_values(mu0),
            outcome1: LearnerSpec::oracle_values(mu1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propensity.validate_for(Task::Probability)?;
        self.outcome0.validate_for(Task::Mean)?;
        self.outcome1.validate_for(Task::Mean)
    }
}

/// Provenance of one nuisance fit: learner labels plus a digest of the
/// training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub propensity: String,
    pub outcome0: String,
    pub outcome1: String,
    pub train_digest: String,
}

/// Digest over a set of training rows, order-insensitive.
pub fn train_digest(rows: &[usize]) -> String {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut hasher = Sha256::new();
    for r in sorted {
        hasher.update((r as u64).to_le_bytes());
    }
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Nuisance predictions on a block of rows, with the propensity already
/// clipped.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub rows: Vec<usize>,
    pub e_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub clip: Clip,
    pub clipped_low: usize,
    pub clipped_high: usize,
    pub provenance: Provenance,
}

impl NuisanceFit {
    /// Checks that the recorded training digest matches the complement of
    /// the prediction rows, i.e. that no prediction row was trained on.
    pub fn audit_honesty(&self, n: usize) -> bool {
        let mut in_fold = vec![false; n];
        for &r in &self.rows {
            if r >= n {
                return false;
            }
            in_fold[r] = true;
        }
        let complement: Vec<usize> = (0..n).filter(|&r| !in_fold[r]).collect();
        self.provenance.train_digest == train_digest(&complement)
    }
}

fn assemble_fit(
    d: &Dataset,
    train: &[usize],
    predict_rows: Vec<usize>,
    specs: &NuisanceSpecs,
    clip: Clip,
    stream: &Stream,
) -> Result<NuisanceFit> {
    let prop = fit_propensity(d, train, &specs.propensity, &stream.child("e", 0))?;
    let m0 = fit_outcome(d, train, 0, &specs.outcome0, &stream.child("mu0", 0))?;
    let m1 = fit_outcome(d, train, 1, &specs.outcome1, &stream.child("mu1", 0))?;

    let e_raw = prop.predict(d, &predict_rows)?;
    let mu0_hat = m0.predict(d, &predict_rows)?;
    let mu1_hat = m1.predict(d, &predict_rows)?;
    for (name, values) in [("propensity", &e_raw), ("mu0", &mu0_hat), ("mu1", &mu1_hat)] {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{name} prediction is not finite at row {}",
                predict_rows[i]
            )));
        }
    }
    let mut clipped_low = 0;
    let mut clipped_high = 0;
    let e_hat: Vec<f64> = e_raw
        .into_iter()
        .map(|e| {
            if e < clip.lo {
                clipped_low += 1;
            } else if e > clip.hi {
                clipped_high += 1;
            }
            clip.apply(e)
        })
        .collect();
    Ok(NuisanceFit {
        rows: predict_rows,
        e_hat,
        mu0_hat,
        mu1_hat,
        clip,
        clipped_low,
        clipped_high,
        provenance: Provenance {
            propensity: prop.label().to_string(),
            outcome0: m0.label().to_string(),
            outcome1: m1.label().to_string(),
            train_digest: train_digest(train),
        },
    })
}

/// Fits all three nuisances on every row and predicts on every row (no
/// cross-fitting); used by the plain full-sample estimator.
pub fn fit_nuisances_full(
    d: &Dataset,
    specs: &NuisanceSpecs,
    clip: Clip,
    stream: &Stream,
) -> Result<NuisanceFit> {
    specs.validate()?;
    clip.validate()?;
    let all: Vec<usize> = (0..d.n()).collect();
    assemble_fit(d, &all, all.clone(), specs, clip, &stream.child("full", 0))
}

/// Fits only the treatment model, leaving the outcome slots zeroed and
/// labelled "none". Balance and overlap diagnostics need just the propensity,
/// so this path never reads the outcome column. The stream layout matches
/// [`fit_nuisances_full`], so for the same spec and seed the propensity
/// predictions agree bitwise with a full fit.
pub fn fit_propensity_only(
    d: &Dataset,
    spec: &LearnerSpec,
    clip: Clip,
    stream: &Stream,
) -> Result<NuisanceFit> {
    clip.validate()?;
    let all: Vec<usize> = (0..d.n()).collect();
    let prop = fit_propensity(d, &all, spec, &stream.child("full", 0).child("e", 0))?;
    let e_raw = prop.predict(d, &all)?;
    if let Some(i) = e_raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!(
            "propensity prediction is not finite at row {i}"
        )));
    }
    let mut clipped_low = 0;
    let mut clipped_high = 0;
    let e_hat: Vec<f64> = e_raw
        .into_iter()
        .map(|e| {
            if e < clip.lo {
                clipped_low += 1;
            } else if e > clip.hi {
                clipped_high += 1;
            }
            clip.apply(e)
        })
        .collect();
    let zeros = vec![0.0; d.n()];
    Ok(NuisanceFit {
        rows: all.clone(),
        e_hat,
        mu0_hat: zeros.clone(),
        mu1_hat: zeros,
        clip,
        clipped_low,
        clipped_high,
        provenance: Provenance {
            propensity: prop.label().to_string(),
            outcome0: "none".into(),
            outcome1: "none".into(),
            train_digest: train_digest(&all),
        },
    })
}

/// Cross-fits the nuisance triple for one split of the plan: fold k's
/// predictions come from models trained on its complement.
pub fn cross_fit_nuisances(
    d: &Dataset,
    plan: &SplitPlan,
    split: usize,
    specs: &NuisanceSpecs,
    clip: Clip,
    stream: &Stream,
) -> Result<Vec<NuisanceFit>> {
    specs.validate()?;
    clip.validate()?;
    if plan.n() != d.n() {
        return Err(Error::Config(format!(
            "split plan covers {} rows, dataset has {}",
            plan.n(),
            d.n()
        )));
    }
    let split_stream = stream.child("split", split as u64);
    (0..plan.k())
        .map(|k| {
            let train = plan.train_rows(split, k);
            let fold = plan.fold_rows(split, k);
            assemble_fit(
                d,
                &train,
                fold,
                specs,
                clip,
                &split_stream.child("fold", k as u64),
            )
            .map_err(|e| Error::fold(k, e))
        })
        .collect()
}
