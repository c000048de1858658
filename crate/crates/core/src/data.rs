//! Observed-data model and CSV ingestion.
//!
//! A [`Dataset`] holds the covariate matrix, binary treatment, and outcome.
//! Construction checks shape and treatment coding; estimability concerns
//! (non-finite values, single-arm data, constant outcome) are collected into
//! a [`ValidationReport`] so callers can surface every problem at once
//! instead of failing on the first.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView2};
use std::io::Read;
use std::path::Path;

/// Observed triples (X, A, Y) with optional row labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    ids: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from parts, checking shapes and treatment coding.
    /// Values may still be non-finite at this point; run [`Dataset::validate`]
    /// before estimating.
    pub fn new(
        covariates: Array2<f64>,
        covariate_names: Vec<String>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = covariates.dim();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(Error::Data("need at least 1 covariate column".into()));
        }
        if covariate_names.len() != p {
            return Err(Error::Data(format!(
                "{} covariate names for {p} columns",
                covariate_names.len()
            )));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Data(format!(
                "row count mismatch: {n} covariate rows, {} treatment, {} outcome",
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::Data(format!(
                    "row count mismatch: {n} covariate rows, {} ids",
                    ids.len()
                )));
            }
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::Data(format!(
                "treatment must be 0 or 1, row {i} has {}",
                treatment[i]
            )));
        }
        Ok(Dataset {
            covariates,
            covariate_names,
            treatment,
            outcome,
            ids,
        })
    }

    /// Convenience constructor that names columns `x1..xp`.
    pub fn from_parts(
        covariates: Array2<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let p = covariates.ncols();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(covariates, names, treatment, outcome, None)
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.covariates.view()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    /// Values of the named covariate column, if present.
    pub fn column_values(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.covariate_names.iter().position(|c| c == name)?;
        Some(self.covariates.column(j).to_vec())
    }

    /// Collects estimability violations. An empty report means the data can
    /// enter the estimators.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (i, row) in self.covariates.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    violations.push(format!(
                        "non-finite covariate at row {i}, column {}",
                        self.covariate_names[j]
                    ));
                }
            }
        }
        for (i, &y) in self.outcome.iter().enumerate() {
            if !y.is_finite() {
                violations.push(format!("non-finite outcome at row {i}"));
            }
        }
        let n_treated = self.n_treated();
        if n_treated == 0 {
            violations.push("treated arm empty".into());
        }
        if n_treated == self.n() {
            violations.push("control arm empty".into());
        }
        let first = self.outcome[0];
        if self.outcome.iter().all(|&y| y == first) {
            violations.push("outcome is constant".into());
        }
        ValidationReport { violations }
    }

    /// Validates and converts any violation into a data error.
    pub fn require_estimable(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(report.violations().join("; ")))
        }
    }
}

/// Outcome of [`Dataset::validate`]: a list of human-readable violations.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }
}

/// Column selection for CSV ingestion. All columns other than treatment,
/// outcome, and the optional id column must be numeric and become covariates.
#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub treatment: String,
    pub outcome: String,
    pub id: Option<String>,
    pub delimiter: u8,
}

impl CsvSpec {
    pub fn new(treatment: impl Into<String>, outcome: impl Into<String>) -> Self {
        CsvSpec {
            treatment: treatment.into(),
            outcome: outcome.into(),
            id: None,
            delimiter: b',',
        }
    }
}

/// Reads a dataset from a headered CSV file.
pub fn read_csv(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file, spec)
}

/// Reads a dataset from any CSV source with a header row.
pub fn read_csv_from<R: Read>(source: R, spec: &CsvSpec) -> Result<Dataset> {
    Ok(read_csv_impl(source, spec, true)?.0)
}

/// Reads a dataset from a headered CSV file, tolerating a missing outcome
/// column: absent outcomes fill with zeros and the returned flag is false.
/// Useful for balance diagnostics, which never read the outcome.
pub fn read_csv_optional_outcome(path: &Path, spec: &CsvSpec) -> Result<(Dataset, bool)> {
    let file = std::fs::File::open(path)?;
    read_csv_impl(file, spec, false)
}

fn read_csv_impl<R: Read>(
    source: R,
    spec: &CsvSpec,
    outcome_required: bool,
) -> Result<(Dataset, bool)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in CSV header")))
    };
    let a_col = find(&spec.treatment)?;
    let y_col = if outcome_required {
        Some(find(&spec.outcome)?)
    } else {
        headers.iter().position(|h| h == &spec.outcome)
    };
    if y_col == Some(a_col) {
        return Err(Error::Data(format!(
            "treatment and outcome both map to column '{}'",
            spec.treatment
        )));
    }
    let id_col = spec.id.as_deref().map(find).transpose()?;

    let mut covariate_cols = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j != a_col && Some(j) != y_col && Some(j) != id_col {
            covariate_cols.push((j, name.clone()));
        }
    }
    if covariate_cols.is_empty() {
        return Err(Error::Data("no covariate columns remain in CSV".into()));
    }

    let parse = |field: &str, column: &str, row: usize| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            Error::Data(format!(
                "column '{column}' is not numeric at data row {row}: '{field}'"
            ))
        })
    };

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut ids = id_col.map(|_| Vec::new());
    let mut flat = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("CSV parse error: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "data row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let a = parse(&record[a_col], &spec.treatment, row)?;
        if a != 0.0 && a != 1.0 {
            return Err(Error::Data(format!(
                "column '{}' must be 0 or 1, data row {row} has '{}'",
                spec.treatment, &record[a_col]
            )));
        }
        treatment.push(a as u8);
        outcome.push(match y_col {
            Some(j) => parse(&record[j], &spec.outcome, row)?,
            None => 0.0,
        });
        if let (Some(ids), Some(j)) = (ids.as_mut(), id_col) {
            ids.push(record[j].to_string());
        }
        for (j, name) in &covariate_cols {
            flat.push(parse(&record[*j], name, row)?);
        }
    }

    let n = treatment.len();
    let p = covariate_cols.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 data rows, got {n}")));
    }
    let covariates = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| Error::Data(format!("cannot shape covariate matrix: {e}")))?;
    let names = covariate_cols.into_iter().map(|(_, name)| name).collect();
    let d = Dataset::new(covariates, names, treatment, outcome, ids)?;
    Ok((d, y_col.is_some()))
}
