//! Command-line runner binding CSV ingestion, estimation, Monte Carlo
//! simulation, and balance diagnostics into reproducible runs.
//!
//! Every run writes machine-readable reports plus a `run_config.json` that
//! embeds the resolved configuration, its digest, the seed, and the binary
//! version; re-running with the recorded settings reproduces the numeric
//! outputs byte for byte. Exit codes distinguish failure classes: 2 for
//! configuration problems, 3 for unusable data, 4 for degenerate estimation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use wate_core::data::{read_csv, read_csv_optional_outcome, CsvSpec};
use wate_core::diagnostics::{balance_table, overlap_summary, DEFAULT_ASMD_THRESHOLD};
use wate_core::estimators::{FoldWeighting, Method};
use wate_core::inference::Aggregation;
use wate_core::learners::{fit_propensity_only, Clip, LearnerSpec, NuisanceSpecs};
use wate_core::pipeline::{estimate_all, RunSettings};
use wate_core::report::{fmt_sig6, reports_to_csv, reports_to_json};
use wate_core::rng::Stream;
use wate_core::simulation::{
    metrics_to_csv, metrics_to_json, run_study, true_gamma, DgpSpec, StudyConfig, StudyLearners,
};
use wate_core::weights::Estimand;
use wate_core::{Error, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "wate",
    version,
    about = "Weighted average treatment effects on propensity-defined target populations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate weighted treatment effects from a CSV dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study against a built-in generating process.
    Simulate(SimulateArgs),
    /// Covariate balance and propensity overlap diagnostics.
    Balance(BalanceArgs),
    /// Monte Carlo evaluation of the true effect under a generating process.
    Truth(TruthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn wants_csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
    fn wants_json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Both => "both",
        }
    }
}

fn parse_estimand(s: &str) -> std::result::Result<Estimand, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_learner(s: &str) -> std::result::Result<LearnerSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dgp(s: &str) -> std::result::Result<DgpSpec, String> {
    let dgp: DgpSpec = s.parse().map_err(|e: Error| e.to_string())?;
    dgp.validate().map_err(|e| e.to_string())?;
    Ok(dgp)
}

fn parse_clip(s: &str) -> std::result::Result<Clip, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `lo,hi`, got '{s}'"));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| format!("'{}' is not a number", parts[0]))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| format!("'{}' is not a number", parts[1]))?;
    let clip = Clip { lo, hi };
    clip.validate().map_err(|e: Error| e.to_string())?;
    Ok(clip)
}

fn default_estimands() -> Vec<Estimand> {
    vec![
        Estimand::Ate,
        Estimand::Att,
        Estimand::Atc,
        Estimand::Ato,
        Estimand::Aten,
    ]
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Binary treatment column.
    #[arg(long, default_value = "a")]
    treatment: String,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Identifier column to exclude from the covariates.
    #[arg(long)]
    id: Option<String>,
    /// Target estimand; repeat the flag for several.
    #[arg(long = "estimand", value_parser = parse_estimand, default_values_t = default_estimands())]
    estimands: Vec<Estimand>,
    /// Estimator; repeat the flag for several.
    #[arg(long = "method", value_parser = parse_method, default_values_t = Method::ALL)]
    methods: Vec<Method>,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    /// Repeated sample splits for the cross-fitted estimators.
    #[arg(long = "splits", default_value_t = 100)]
    n_splits: usize,
    /// Root seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Propensity clipping bounds, written `lo,hi`.
    #[arg(long, value_parser = parse_clip, default_value = "0.01,0.99")]
    clip: Clip,
    /// Significance level; intervals cover at 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// How per-split estimates combine: mean or median.
    #[arg(long = "aggregate", value_parser = parse_aggregation, default_value = "mean")]
    aggregation: Aggregation,
    /// Propensity learner.
    #[arg(long = "learner-ps", value_parser = parse_learner, default_value = "logistic")]
    learner_ps: LearnerSpec,
    /// Outcome learner. Once: both arms; twice: control arm then treated arm.
    #[arg(long = "learner-outcome", value_parser = parse_learner, default_values = ["linear"], num_args = 1, action = clap::ArgAction::Append)]
    learner_outcome: Vec<LearnerSpec>,
    /// Attach the comparison-only variance to the plug-in estimators; the
    /// resulting intervals carry a validity warning.
    #[arg(long)]
    naive_variance: bool,
    /// Directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Which report formats to write.
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generating process, dgp1 through dgp5.
    #[arg(long, value_parser = parse_dgp)]
    dgp: DgpSpec,
    /// Target estimand; repeat the flag for several.
    #[arg(long = "estimand", value_parser = parse_estimand, default_values_t = default_estimands())]
    estimands: Vec<Estimand>,
    /// Estimator; repeat the flag for several.
    #[arg(long = "method", value_parser = parse_method, default_values_t = Method::ALL)]
    methods: Vec<Method>,
    /// Observations per replication.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Monte Carlo replications.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    /// Repeated sample splits within each replication.
    #[arg(long = "splits", default_value_t = 10)]
    n_splits: usize,
    /// Root seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Propensity clipping bounds, written `lo,hi`.
    #[arg(long, value_parser = parse_clip, default_value = "0.01,0.99")]
    clip: Clip,
    /// Significance level for the coverage check.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// How per-split estimates combine: mean or median.
    #[arg(long = "aggregate", value_parser = parse_aggregation, default_value = "mean")]
    aggregation: Aggregation,
    /// Hand every replication the generating process's true nuisance values
    /// instead of fitting learners.
    #[arg(long)]
    oracle: bool,
    /// Propensity learner.
    #[arg(long = "learner-ps", value_parser = parse_learner, default_value = "logistic")]
    learner_ps: LearnerSpec,
    /// Outcome learner. Once: both arms; twice: control arm then treated arm.
    #[arg(long = "learner-outcome", value_parser = parse_learner, default_values = ["linear"], num_args = 1, action = clap::ArgAction::Append)]
    learner_outcome: Vec<LearnerSpec>,
    /// Known true effect; skips the Monte Carlo truth evaluation and requires
    /// exactly one --estimand.
    #[arg(long)]
    gamma0: Option<f64>,
    /// Rows per truth replication when --gamma0 is absent.
    #[arg(long, default_value_t = 1_000_000)]
    truth_n: usize,
    /// Truth replications when --gamma0 is absent.
    #[arg(long, default_value_t = 10)]
    truth_reps: usize,
    /// Directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Which report formats to write.
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct BalanceArgs {
    /// Input CSV with a header row; the outcome column may be absent.
    #[arg(long)]
    data: PathBuf,
    /// Binary treatment column.
    #[arg(long, default_value = "a")]
    treatment: String,
    /// Outcome column, excluded from the covariates when present.
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Identifier column to exclude from the covariates.
    #[arg(long)]
    id: Option<String>,
    /// Estimand whose tilting weights to audit; repeat for several.
    #[arg(long = "estimand", value_parser = parse_estimand, default_values_t = default_estimands())]
    estimands: Vec<Estimand>,
    /// Propensity learner.
    #[arg(long = "learner-ps", value_parser = parse_learner, default_value = "logistic")]
    learner_ps: LearnerSpec,
    /// Propensity clipping bounds, written `lo,hi`.
    #[arg(long, value_parser = parse_clip, default_value = "0.01,0.99")]
    clip: Clip,
    /// Root seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weighted standardized-difference cutoff for the flag column.
    #[arg(long, default_value_t = DEFAULT_ASMD_THRESHOLD)]
    threshold: f64,
    /// Histogram bins in the overlap summary.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Which report formats to write.
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct TruthArgs {
    /// Generating process, dgp1 through dgp5.
    #[arg(long, value_parser = parse_dgp)]
    dgp: DgpSpec,
    /// Estimand to evaluate; repeat for several.
    #[arg(long = "estimand", value_parser = parse_estimand, default_values_t = default_estimands())]
    estimands: Vec<Estimand>,
    /// Rows per replication.
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    /// Replications; the between-replication spread gives the standard error.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Root seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Which report formats to write.
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Balance(args) => cmd_balance(args),
        Command::Truth(args) => cmd_truth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Fold { source, .. } => exit_code(source),
        Error::Degenerate(_) | Error::Convergence { .. } | Error::Domain(_) => 4,
    }
}

/// Splits the repeatable outcome-learner flag into (control, treated) specs.
fn outcome_pair(specs: &[LearnerSpec]) -> Result<(LearnerSpec, LearnerSpec)> {
    match specs {
        [both] => Ok((both.clone(), both.clone())),
        [m0, m1] => Ok((m0.clone(), m1.clone())),
        _ => Err(Error::Config(format!(
            "--learner-outcome takes one value (both arms) or two (control, treated); got {}",
            specs.len()
        ))),
    }
}

fn config_digest(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Wraps rows in the report envelope: schema and binary versions, seed, and
/// the resolved configuration with its digest.
fn envelope(
    command: &str,
    seed: u64,
    config: &serde_json::Value,
    body: serde_json::Value,
) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_digest": config_digest(config),
        "config": config,
        "report": body,
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn write_config_record(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &serde_json::Value,
) -> Result<()> {
    let record = json!({
        "schema_version": SCHEMA_VERSION,
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_digest": config_digest(config),
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Data(format!("JSON render error: {e}")))?;
    text.push('\n');
    write_text(dir, "run_config.json", &text)?;
    Ok(())
}

fn json_with_newline(value: &serde_json::Value) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("JSON render error: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn names<T: std::fmt::Display>(items: &[T]) -> Vec<String> {
    items.iter().map(|x| x.to_string()).collect()
}

/// Rewraps a file-open failure so the message names the path.
fn name_path(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Data(format!("cannot read '{}': {io}", path.display())),
        other => other,
    }
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let (outcome0, outcome1) = outcome_pair(&a.learner_outcome)?;
    let mut csv_spec = CsvSpec::new(&a.treatment, &a.outcome);
    csv_spec.id = a.id.clone();
    let d = read_csv(&a.data, &csv_spec).map_err(name_path(&a.data))?;

    let settings = RunSettings {
        k_folds: a.k_folds,
        n_splits: a.n_splits,
        seed: a.seed,
        clip: a.clip,
        alpha: a.alpha,
        aggregation: a.aggregation,
        fold_weighting: FoldWeighting::Equal,
        naive_variance: a.naive_variance,
    };
    let specs = NuisanceSpecs {
        propensity: a.learner_ps.clone(),
        outcome0,
        outcome1,
    };
    let config = json!({
        "data": a.data.display().to_string(),
        "treatment": a.treatment,
        "outcome": a.outcome,
        "id": a.id,
        "estimands": names(&a.estimands),
        "methods": names(&a.methods),
        "k_folds": a.k_folds,
        "n_splits": a.n_splits,
        "seed": a.seed,
        "clip": [a.clip.lo, a.clip.hi],
        "alpha": a.alpha,
        "aggregation": a.aggregation.to_string(),
        "learner_ps": a.learner_ps.label(),
        "learner_outcome0": specs.outcome0.label(),
        "learner_outcome1": specs.outcome1.label(),
        "naive_variance": a.naive_variance,
        "format": a.format.name(),
    });

    let reports = estimate_all(&d, &a.estimands, &a.methods, &specs, &settings)?;

    write_config_record(&a.out, "estimate", a.seed, &config)?;
    if a.format.wants_csv() {
        write_text(&a.out, "estimates.csv", &reports_to_csv(&reports)?)?;
    }
    if a.format.wants_json() {
        let body: serde_json::Value = serde_json::from_str(&reports_to_json(&reports)?)
            .map_err(|e| Error::Data(format!("JSON render error: {e}")))?;
        let wrapped = envelope("estimate", a.seed, &config, body);
        write_text(&a.out, "estimates.json", &json_with_newline(&wrapped)?)?;
    }

    for r in &reports {
        let ci = match (r.ci_lo, r.ci_hi) {
            (Some(lo), Some(hi)) => format!(" ci=[{}, {}]", fmt_sig6(lo), fmt_sig6(hi)),
            _ => String::new(),
        };
        let se =
            r.se.map(|s| format!(" se={}", fmt_sig6(s)))
                .unwrap_or_default();
        println!(
            "{:>10} {:<7} gamma={}{se}{ci}",
            r.estimand.to_string(),
            r.method.to_string(),
            fmt_sig6(r.gamma_hat)
        );
        for w in &r.warnings {
            println!("           warning: {w}");
        }
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (outcome0, outcome1) = outcome_pair(&a.learner_outcome)?;
    if a.gamma0.is_some() && a.estimands.len() != 1 {
        return Err(Error::Config(
            "--gamma0 pins one truth value, so it requires exactly one --estimand".into(),
        ));
    }
    let settings = RunSettings {
        k_folds: a.k_folds,
        n_splits: a.n_splits,
        seed: a.seed,
        clip: a.clip,
        alpha: a.alpha,
        aggregation: a.aggregation,
        // The study compares plug-in and corrected estimators, so the
        // comparison-only naive variance is always attached here.
        naive_variance: true,
        fold_weighting: FoldWeighting::Equal,
    };
    let learners = if a.oracle {
        StudyLearners::Oracle
    } else {
        StudyLearners::Specs(NuisanceSpecs {
            propensity: a.learner_ps.clone(),
            outcome0: outcome0.clone(),
            outcome1: outcome1.clone(),
        })
    };
    let config = json!({
        "dgp": a.dgp,
        "estimands": names(&a.estimands),
        "methods": names(&a.methods),
        "n": a.n,
        "reps": a.reps,
        "k_folds": a.k_folds,
        "n_splits": a.n_splits,
        "seed": a.seed,
        "clip": [a.clip.lo, a.clip.hi],
        "alpha": a.alpha,
        "aggregation": a.aggregation.to_string(),
        "oracle": a.oracle,
        "learner_ps": a.learner_ps.label(),
        "learner_outcome0": outcome0.label(),
        "learner_outcome1": outcome1.label(),
        "gamma0": a.gamma0,
        "truth_n": a.truth_n,
        "truth_reps": a.truth_reps,
        "format": a.format.name(),
    });

    let mut rows = Vec::new();
    for w in &a.estimands {
        let gamma0 = match a.gamma0 {
            Some(g) => g,
            None => {
                let t = true_gamma(&a.dgp, w, a.truth_n, a.truth_reps, &Stream::root(a.seed))?;
                println!(
                    "{w}: gamma0={} (truth se {})",
                    fmt_sig6(t.gamma0),
                    fmt_sig6(t.se)
                );
                t.gamma0
            }
        };
        let study = StudyConfig {
            dgp: a.dgp,
            estimand: *w,
            n: a.n,
            m_reps: a.reps,
            methods: a.methods.clone(),
            learners: learners.clone(),
            settings: settings.clone(),
            gamma0,
        };
        rows.extend(run_study(&study)?);
    }

    write_config_record(&a.out, "simulate", a.seed, &config)?;
    if a.format.wants_csv() {
        write_text(&a.out, "metrics.csv", &metrics_to_csv(&rows)?)?;
    }
    if a.format.wants_json() {
        let body: serde_json::Value = serde_json::from_str(&metrics_to_json(&rows)?)
            .map_err(|e| Error::Data(format!("JSON render error: {e}")))?;
        let wrapped = envelope("simulate", a.seed, &config, body);
        write_text(&a.out, "metrics.json", &json_with_newline(&wrapped)?)?;
    }

    for r in &rows {
        let cp = r
            .cp_pct
            .map(|c| {
                format!(
                    " cp={}% (band [{}, {}])",
                    fmt_sig6(c),
                    fmt_sig6(r.mc_band.0),
                    fmt_sig6(r.mc_band.1)
                )
            })
            .unwrap_or_default();
        println!(
            "{:>10} {:<7} abias={} sd={} rmse={}{cp}",
            r.estimand.to_string(),
            r.method.to_string(),
            fmt_sig6(r.abias),
            fmt_sig6(r.sd),
            fmt_sig6(r.rmse)
        );
        if r.reps_failed > 0 {
            println!(
                "           {} of {} replications failed and were excluded",
                r.reps_failed, r.m_reps
            );
        }
    }
    Ok(())
}

fn cmd_balance(a: BalanceArgs) -> Result<()> {
    let mut csv_spec = CsvSpec::new(&a.treatment, &a.outcome);
    csv_spec.id = a.id.clone();
    let (d, has_outcome) =
        read_csv_optional_outcome(&a.data, &csv_spec).map_err(name_path(&a.data))?;
    if !has_outcome {
        println!(
            "outcome column '{}' absent; balance needs only covariates and treatment",
            a.outcome
        );
    }

    let fit = fit_propensity_only(&d, &a.learner_ps, a.clip, &Stream::root(a.seed))?;
    let table = balance_table(&d, &fit, &a.estimands, a.threshold)?;
    let overlap = overlap_summary(&d, &fit, a.bins)?;

    let config = json!({
        "data": a.data.display().to_string(),
        "treatment": a.treatment,
        "outcome": a.outcome,
        "id": a.id,
        "estimands": names(&a.estimands),
        "learner_ps": a.learner_ps.label(),
        "clip": [a.clip.lo, a.clip.hi],
        "seed": a.seed,
        "threshold": a.threshold,
        "bins": a.bins,
        "format": a.format.name(),
    });

    write_config_record(&a.out, "balance", a.seed, &config)?;
    if a.format.wants_csv() {
        write_text(&a.out, "balance.csv", &table.to_csv()?)?;
        write_text(&a.out, "love_plot.csv", &table.love_plot_csv()?)?;
        write_text(&a.out, "overlap.csv", &overlap.to_csv()?)?;
    }
    if a.format.wants_json() {
        let body = json!({
            "balance": serde_json::from_str::<serde_json::Value>(&table.to_json()?)
                .map_err(|e| Error::Data(format!("JSON render error: {e}")))?,
            "overlap": serde_json::from_str::<serde_json::Value>(&overlap.to_json()?)
                .map_err(|e| Error::Data(format!("JSON render error: {e}")))?,
        });
        let wrapped = envelope("balance", a.seed, &config, body);
        write_text(&a.out, "balance.json", &json_with_newline(&wrapped)?)?;
    }

    let flagged: usize = table
        .rows
        .iter()
        .map(|r| r.weighted.iter().filter(|w| w.flagged).count())
        .sum();
    println!(
        "{} covariates x {} weightings; {} flagged above threshold {}",
        table.rows.len(),
        table.estimands.len(),
        flagged,
        fmt_sig6(a.threshold)
    );
    println!(
        "propensity clipped: {} low, {} high",
        fit.clipped_low, fit.clipped_high
    );
    Ok(())
}

fn cmd_truth(a: TruthArgs) -> Result<()> {
    let config = json!({
        "dgp": a.dgp,
        "estimands": names(&a.estimands),
        "n": a.n,
        "reps": a.reps,
        "seed": a.seed,
        "format": a.format.name(),
    });

    let mut rows = Vec::new();
    for w in &a.estimands {
        let t = true_gamma(&a.dgp, w, a.n, a.reps, &Stream::root(a.seed))?;
        println!(
            "{:>10} gamma0={} se={}",
            w.to_string(),
            fmt_sig6(t.gamma0),
            fmt_sig6(t.se)
        );
        rows.push((*w, t));
    }

    write_config_record(&a.out, "truth", a.seed, &config)?;
    if a.format.wants_csv() {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["estimand", "gamma0", "se", "n_large", "reps"])
            .map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
        for (w, t) in &rows {
            wtr.write_record([
                w.to_string(),
                fmt_sig6(t.gamma0),
                fmt_sig6(t.se),
                t.n_large.to_string(),
                t.per_rep.len().to_string(),
            ])
            .map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
        let text =
            String::from_utf8(bytes).map_err(|e| Error::Data(format!("CSV render error: {e}")))?;
        write_text(&a.out, "truth.csv", &text)?;
    }
    if a.format.wants_json() {
        let body: Vec<serde_json::Value> = rows
            .iter()
            .map(|(w, t)| {
                json!({
                    "estimand": w.to_string(),
                    "gamma0": t.gamma0,
                    "se": t.se,
                    "n_large": t.n_large,
                    "reps": t.per_rep.len(),
                    "per_rep": t.per_rep,
                })
            })
            .collect();
        let wrapped = envelope("truth", a.seed, &config, serde_json::Value::Array(body));
        write_text(&a.out, "truth.json", &json_with_newline(&wrapped)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_and_pair_parsing() {
        let c = parse_clip("0.02, 0.98").unwrap();
        assert_eq!((c.lo, c.hi), (0.02, 0.98));
        assert!(parse_clip("0.5").is_err());
        assert!(parse_clip("0.9,0.1").is_err());

        let one = [LearnerSpec::Linear];
        let (m0, m1) = outcome_pair(&one).unwrap();
        assert_eq!(m0, LearnerSpec::Linear);
        assert_eq!(m1, LearnerSpec::Linear);
        let two = [
            LearnerSpec::oracle_column("mu0"),
            LearnerSpec::oracle_column("mu1"),
        ];
        let (m0, m1) = outcome_pair(&two).unwrap();
        assert_eq!(m0.label(), "oracle:mu0");
        assert_eq!(m1.label(), "oracle:mu1");
        assert!(outcome_pair(&[]).is_err());
    }

    #[test]
    fn parse_errors_name_valid_choices() {
        let err = parse_estimand("atq").unwrap_err();
        assert!(err.contains("valid choices"), "{err}");
        let err = parse_method("bagging").unwrap_err();
        assert!(err.contains("valid choices"), "{err}");
        let err = parse_dgp("dgp9").unwrap_err();
        assert!(err.contains("through 5"), "{err}");
        let err = parse_dgp("frob").unwrap_err();
        assert!(err.contains("dgp1 through dgp5"), "{err}");
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::Degenerate("x".into())), 4);
        assert_eq!(
            exit_code(&Error::Convergence {
                iterations: 3,
                last_deviance: 1.0
            }),
            4
        );
        assert_eq!(exit_code(&Error::Domain("x".into())), 4);
        let nested = Error::fold(2, Error::Data("bad fold".into()));
        assert_eq!(exit_code(&nested), 3);
    }

    #[test]
    fn config_digest_is_stable_and_sensitive() {
        let c1 = json!({"seed": 1, "n": 100});
        let c2 = json!({"seed": 1, "n": 100});
        let c3 = json!({"seed": 2, "n": 100});
        assert_eq!(config_digest(&c1), config_digest(&c2));
        assert_ne!(config_digest(&c1), config_digest(&c3));
        assert_eq!(config_digest(&c1).len(), 64);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
