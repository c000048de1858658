//! Synthetic data generation and the Monte Carlo study harness.
//!
//! Covariates are iid standard normal. Treatment follows a probit-shaped
//! propensity Phi[(a(X) - E{a}) / sd{a}] whose index a(X) comes in four
//! shapes; the standardization constants are estimated once from a large
//! calibration draw with a fixed internal stream and then frozen, so the
//! propensity is the same population function in every replication. The
//! outcome is Y = tau(X) A + mu0(X) + U with U standard normal, and both
//! potential outcomes are retained so oracle learners can be formed.

pub mod probe;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::learners::NuisanceSpecs;
use crate::normal::std_normal_cdf;
use crate::pipeline::{estimate_all, RunSettings};
use crate::rng::Stream;
use crate::util::{mean_c, variance_population, variance_sample, CompensatedSum};
use crate::weights::Estimand;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Shape of the propensity index a(X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsKind {
    /// Constant propensity; treatment is randomized.
    Random,
    Linear,
    Interaction,
    Nonlinear,
}

/// Shape of the treatment effect tau(X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CateKind {
    Zero,
    Binary,
    Linear,
    Nonlinear,
}

/// One data-generating process: a propensity shape, an effect shape, the
/// covariate count, and the constant propensity used by the random shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub ps_kind: PsKind,
    pub cate_kind: CateKind,
    pub p: usize,
    pub ps_const: f64,
}

impl DgpSpec {
    pub fn new(ps_kind: PsKind, cate_kind: CateKind) -> Self {
        DgpSpec {
            ps_kind,
            cate_kind,
            p: 10,
            ps_const: 0.3,
        }
    }

    /// The five named processes, by number.
    pub fn numbered(i: usize) -> Result<Self> {
        let (ps, cate) = match i {
            1 => (PsKind::Nonlinear, CateKind::Nonlinear),
            2 => (PsKind::Linear, CateKind::Linear),
            3 => (PsKind::Interaction, CateKind::Binary),
            4 => (PsKind::Random, CateKind::Linear),
            5 => (PsKind::Linear, CateKind::Zero),
            _ => {
                return Err(Error::Config(format!(
                    "unknown generating process {i}; valid numbers: 1 through 5"
                )))
            }
        };
        Ok(DgpSpec::new(ps, cate))
    }

    pub fn validate(&self) -> Result<()> {
        let needed = self.min_p();
        if self.p < needed {
            return Err(Error::Config(format!(
                "this process reads covariate {needed}, but p = {}",
                self.p
            )));
        }
        if self.ps_kind == PsKind::Random && !(self.ps_const > 0.0 && self.ps_const < 1.0) {
            return Err(Error::Config(format!(
                "constant propensity must lie in (0, 1), got {}",
                self.ps_const
            )));
        }
        Ok(())
    }

    /// Highest covariate index any of the formulas reads.
    fn min_p(&self) -> usize {
        let ps = match self.ps_kind {
            PsKind::Random => 0,
            _ => 8,
        };
        let cate = match self.cate_kind {
            CateKind::Nonlinear => 10,
            CateKind::Binary | CateKind::Linear => 2,
            CateKind::Zero => 0,
        };
        // The baseline mean mu0 always reads up to the fifth covariate.
        ps.max(cate).max(5)
    }
}

impl std::str::FromStr for DgpSpec {
    type Err = Error;

    /// Accepts `dgp1` through `dgp5` (or the bare number).
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let digits = t.strip_prefix("dgp").unwrap_or(&t);
        match digits.parse::<usize>() {
            Ok(i) => DgpSpec::numbered(i),
            Err(_) => Err(Error::Config(format!(
                "unknown generating process '{s}'; valid names: dgp1 through dgp5"
            ))),
        }
    }
}

/// Baseline conditional mean mu0(X) = X1 + X5 + X4 X5.
fn mu0_value(x: &[f64]) -> f64 {
    x[0] + x[4] + x[3] * x[4]
}

/// Decaying weights b = (1, 1/2, ..., 1/p) applied to the full row.
fn dot_b(x: &[f64]) -> f64 {
    let mut s = CompensatedSum::new();
    for (j, &v) in x.iter().enumerate() {
        s.add(v / (j + 1) as f64);
    }
    s.value()
}

/// Propensity index a(X) before standardization.
fn a_value(kind: PsKind, x: &[f64]) -> f64 {
    match kind {
        PsKind::Random => 0.0,
        PsKind::Linear => x[1] + x[2] + x[4] - x[7],
        PsKind::Interaction => dot_b(x) + x[1] + x[4] + x[2] * x[7],
        PsKind::Nonlinear => dot_b(x) + x[1] + 1.5 * (x[3] * x[7]).cos() + 2.0 * x[4].sin(),
    }
}

/// Treatment effect tau(X).
fn tau_value(kind: CateKind, x: &[f64]) -> f64 {
    match kind {
        CateKind::Zero => 0.0,
        CateKind::Binary => {
            if x[1] >= 0.0 {
                2.0
            } else {
                -1.0
            }
        }
        CateKind::Linear => x[0] + x[1],
        CateKind::Nonlinear => 2.0 * (x[0] + 0.5 * x[1] + 0.33 * x[2]).sin() + 1.5 * x[9].cos(),
    }
}

/// Stream seed for the calibration draw. Fixed and internal: the
/// standardization constants are population quantities, independent of any
/// user seed.
const CALIBRATION_SEED: u64 = 971_104_823;
const CALIBRATION_ROWS: usize = 1_000_000;

/// Keeps the weight evaluation off the floating-point boundary of (0, 1).
const PROPENSITY_FLOOR: f64 = 1e-12;

fn kind_code(kind: PsKind) -> u64 {
    match kind {
        PsKind::Random => 0,
        PsKind::Linear => 1,
        PsKind::Interaction => 2,
        PsKind::Nonlinear => 3,
    }
}

/// Mean and standard deviation of a(X) under the covariate law, estimated
/// once per (shape, p) from the calibration draw and then frozen.
pub fn standardization_constants(kind: PsKind, p: usize) -> (f64, f64) {
    if kind == PsKind::Random {
        return (0.0, 1.0);
    }
    type Cache = Mutex<HashMap<(PsKind, usize), (f64, f64)>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("calibration cache poisoned");
    if let Some(&c) = map.get(&(kind, p)) {
        return c;
    }
    let mut rng = Stream::root(CALIBRATION_SEED)
        .child("calibrate", kind_code(kind))
        .child("p", p as u64)
        .rng();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut row = vec![0.0f64; p];
    for i in 0..CALIBRATION_ROWS {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let a = a_value(kind, &row);
        let k = (i + 1) as f64;
        let d = a - mean;
        mean += d / k;
        m2 += d * (a - mean);
    }
    let sd = (m2 / CALIBRATION_ROWS as f64).sqrt();
    map.insert((kind, p), (mean, sd));
    (mean, sd)
}

/// True propensity at one covariate row.
pub(crate) fn propensity_value(dgp: &DgpSpec, constants: (f64, f64), x: &[f64]) -> f64 {
    let e = match dgp.ps_kind {
        PsKind::Random => dgp.ps_const,
        kind => std_normal_cdf((a_value(kind, x) - constants.0) / constants.1),
    };
    e.clamp(PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
}

/// A generated dataset together with every quantity the generator knows:
/// true propensity, arm means, effect, and both potential outcomes.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: Dataset,
    pub e: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub tau: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl GeneratedData {
    /// Oracle learner triple over the generator's own nuisance values.
    pub fn oracle_specs(&self) -> NuisanceSpecs {
        NuisanceSpecs::oracle_values(self.e.clone(), self.mu0.clone(), self.mu1.clone())
    }
}

/// Draws one dataset of n rows. Covariates come from the stream's "x"
/// child, outcome noise from "u", treatment assignment from "a", so the
/// three sources cannot alias.
pub fn generate(dgp: &DgpSpec, n: usize, stream: &Stream) -> Result<GeneratedData> {
    dgp.validate()?;
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 rows, got {n}")));
    }
    let constants = standardization_constants(dgp.ps_kind, dgp.p);
    let p = dgp.p;
    let mut xrng = stream.child("x", 0).rng();
    let mut urng = stream.child("u", 0).rng();
    let mut arng = stream.child("a", 0).rng();

    let mut xv = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        xv.push(xrng.sample::<f64, _>(StandardNormal));
    }
    let mut e = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = &xv[i * p..(i + 1) * p];
        let ei = propensity_value(dgp, constants, row);
        let m0 = mu0_value(row);
        let t = tau_value(dgp.cate_kind, row);
        let u: f64 = urng.sample(StandardNormal);
        let (p0, p1) = (m0 + u, m0 + t + u);
        let ai = u8::from(arng.random::<f64>() < ei);
        e.push(ei);
        mu0.push(m0);
        mu1.push(m0 + t);
        tau.push(t);
        y0.push(p0);
        y1.push(p1);
        y.push(if ai == 1 { p1 } else { p0 });
        a.push(ai);
    }
    let x = Array2::from_shape_vec((n, p), xv)
        .map_err(|err| Error::Data(format!("cannot shape covariate matrix: {err}")))?;
    let data = Dataset::from_parts(x, a, y)?;
    Ok(GeneratedData {
        data,
        e,
        mu0,
        mu1,
        tau,
        y0,
        y1,
    })
}

/// Large-sample value of the target ratio E[lambda(e) tau] / E[lambda(e)],
/// averaged over independent replications, with a between-rep standard
/// error as the precision certificate.
#[derive(Debug, Clone, Serialize)]
pub struct TruthEstimate {
    pub gamma0: f64,
    /// Between-replication standard error of the average.
    pub se: f64,
    pub n_large: usize,
    pub per_rep: Vec<f64>,
}

pub fn true_gamma(
    dgp: &DgpSpec,
    w: &Estimand,
    n_large: usize,
    reps: usize,
    stream: &Stream,
) -> Result<TruthEstimate> {
    dgp.validate()?;
    if n_large == 0 {
        return Err(Error::Config("need at least 1 row per replication".into()));
    }
    if reps < 2 {
        return Err(Error::Config(
            "the between-rep standard error needs at least 2 replications".into(),
        ));
    }
    let constants = standardization_constants(dgp.ps_kind, dgp.p);
    let p = dgp.p;
    let per_rep: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child("truth-rep", r as u64).rng();
            let mut row = vec![0.0f64; p];
            let mut num = CompensatedSum::new();
            let mut den = CompensatedSum::new();
            for _ in 0..n_large {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let e = propensity_value(dgp, constants, &row);
                let lam = w.weight(e);
                num.add(lam * tau_value(dgp.cate_kind, &row));
                den.add(lam);
            }
            let d = den.value();
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Degenerate(format!(
                    "weight total is {d} over {n_large} rows"
                )));
            }
            Ok(num.value() / d)
        })
        .collect::<Result<_>>()?;
    let gamma0 = mean_c(&per_rep);
    let se = (variance_sample(&per_rep) / reps as f64).sqrt();
    Ok(TruthEstimate {
        gamma0,
        se,
        n_large,
        per_rep,
    })
}

/// Nuisance learners used inside a study: the generator's own values, or a
/// fitted triple.
#[derive(Debug, Clone)]
pub enum StudyLearners {
    Oracle,
    Specs(NuisanceSpecs),
}

/// One Monte Carlo study: a generating process, an estimand, a sample size,
/// and the estimation setup evaluated against a known gamma0.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub dgp: DgpSpec,
    pub estimand: Estimand,
    pub n: usize,
    pub m_reps: usize,
    pub methods: Vec<Method>,
    pub learners: StudyLearners,
    pub settings: RunSettings,
    pub gamma0: f64,
}

/// Accuracy and coverage metrics for one method within a study.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    #[serde(serialize_with = "crate::report::estimand_name")]
    pub estimand: Estimand,
    pub method: Method,
    pub n: usize,
    pub m_reps: usize,
    pub reps_used: usize,
    pub reps_failed: usize,
    pub gamma0: f64,
    pub abias: f64,
    pub sd: f64,
    pub rmse: f64,
    /// Wald-interval coverage, percent; absent when the method reports no
    /// interval.
    pub cp_pct: Option<f64>,
    /// Monte Carlo acceptance band around the nominal coverage level,
    /// nominal +/- 1.96 sqrt(nominal (100 - nominal) / reps_used).
    pub mc_band: (f64, f64),
}

/// Runs the study: one replication per derived "rep" stream, metrics per
/// method over the replications that estimated successfully. Failed
/// replications are counted, never silently dropped.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<MetricsRow>> {
    cfg.dgp.validate()?;
    cfg.settings.validate()?;
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    if cfg.m_reps == 0 {
        return Err(Error::Config("need at least 1 replication".into()));
    }
    if let StudyLearners::Specs(specs) = &cfg.learners {
        specs.validate()?;
    }
    // Per replication, one (estimate, interval) pair per method; None when
    // the replication failed.
    type RepOutcome = Vec<(f64, Option<(f64, f64)>)>;
    let root = Stream::root(cfg.settings.seed);
    let outcomes: Vec<Option<RepOutcome>> = (0..cfg.m_reps)
        .into_par_iter()
        .map(|m| {
            let rep = root.child("rep", m as u64);
            let gen = generate(&cfg.dgp, cfg.n, &rep).ok()?;
            let specs = match &cfg.learners {
                StudyLearners::Oracle => gen.oracle_specs(),
                StudyLearners::Specs(s) => s.clone(),
            };
            let mut rep_settings = cfg.settings.clone();
            rep_settings.seed = rep.child("estimate", 0).derive_seed();
            let reports = estimate_all(
                &gen.data,
                &[cfg.estimand],
                &cfg.methods,
                &specs,
                &rep_settings,
            )
            .ok()?;
            Some(
                reports
                    .iter()
                    .map(|r| (r.gamma_hat, r.ci_lo.zip(r.ci_hi)))
                    .collect(),
            )
        })
        .collect();

    let used: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let reps_failed = cfg.m_reps - used.len();
    if used.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} replications failed to estimate",
            cfg.m_reps
        )));
    }
    let nominal = 100.0 * (1.0 - cfg.settings.alpha);
    let half = 1.96 * (nominal * (100.0 - nominal) / used.len() as f64).sqrt();

    let mut rows = Vec::with_capacity(cfg.methods.len());
    for (j, &method) in cfg.methods.iter().enumerate() {
        let gammas: Vec<f64> = used.iter().map(|r| r[j].0).collect();
        let mean = mean_c(&gammas);
        let abias = (mean - cfg.gamma0).abs();
        let sd = variance_population(&gammas).sqrt();
        let sq_err: Vec<f64> = gammas
            .iter()
            .map(|g| (g - cfg.gamma0) * (g - cfg.gamma0))
            .collect();
        let rmse = mean_c(&sq_err).sqrt();
        let cp_pct = if used.iter().all(|r| r[j].1.is_some()) {
            let covered = used
                .iter()
                .filter(|r| {
                    let (lo, hi) = r[j].1.unwrap();
                    lo <= cfg.gamma0 && cfg.gamma0 <= hi
                })
                .count();
            Some(100.0 * covered as f64 / used.len() as f64)
        } else {
            None
        };
        rows.push(MetricsRow {
            estimand: cfg.estimand,
            method,
            n: cfg.n,
            m_reps: cfg.m_reps,
            reps_used: used.len(),
            reps_failed,
            gamma0: cfg.gamma0,
            abias,
            sd,
            rmse,
            cp_pct,
            mc_band: (nominal - half, nominal + half),
        });
    }
    Ok(rows)
}

pub const METRICS_CSV_HEADER: [&str; 13] = [
    "estimand",
    "method",
    "n",
    "m_reps",
    "reps_used",
    "reps_failed",
    "gamma0",
    "abias",
    "sd",
    "rmse",
    "cp_pct",
    "band_lo",
    "band_hi",
];

/// Renders metrics rows as a CSV table, floats to 6 significant digits.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<String> {
    use crate::report::fmt_sig6;
    let mut w = csv::Writer::from_writer(Vec::new());
    let render = |e: csv::Error| Error::Data(format!("CSV render error: {e}"));
    w.write_record(METRICS_CSV_HEADER).map_err(render)?;
    for r in rows {
        w.write_record([
            r.estimand.to_string(),
            r.method.to_string(),
            r.n.to_string(),
            r.m_reps.to_string(),
            r.reps_used.to_string(),
            r.reps_failed.to_string(),
            fmt_sig6(r.gamma0),
            fmt_sig6(r.abias),
            fmt_sig6(r.sd),
            fmt_sig6(r.rmse),
            r.cp_pct.map(fmt_sig6).unwrap_or_default(),
            fmt_sig6(r.mc_band.0),
            fmt_sig6(r.mc_band.1),
        ])
        .map_err(render)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Pretty JSON array of metrics rows at full precision.
pub fn metrics_to_json(rows: &[MetricsRow]) -> Result<String> {
    serde_json::to_string_pretty(rows).map_err(|e| Error::Data(format!("JSON render error: {e}")))
}
