//! Nested-trial cohort data: every row carries covariates `X` and the trial
//! participation indicator `S`; treatment `A` and outcome `Y` exist only for
//! trial participants (`S = 1`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub s_column: String,
    pub a_column: String,
    pub y_column: String,
    pub covariate_columns: Vec<String>,
    pub effect_modifier: String,
    pub outcome_kind: OutcomeKind,
    /// Drop (with a warning) treatment/outcome values found on `S = 0` rows
    /// instead of rejecting the file.
    #[serde(default)]
    pub lenient: bool,
}

impl SchemaConfig {
    /// Default column names (`s`, `a`, `y`) for a cohort's covariates.
    pub fn for_cohort(cohort: &Cohort) -> Self {
        SchemaConfig {
            s_column: "s".into(),
            a_column: "a".into(),
            y_column: "y".into(),
            covariate_columns: cohort.covariate_names().to_vec(),
            effect_modifier: cohort.covariate_names()[cohort.effect_modifier_index()].clone(),
            outcome_kind: cohort.outcome_kind(),
            lenient: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() {
            return Err(Error::config("schema.covariate_columns", "at least one covariate is required"));
        }
        let hits = self.covariate_columns.iter().filter(|c| **c == self.effect_modifier).count();
        if hits != 1 {
            return Err(Error::config(
                "schema.effect_modifier",
                format!(
                    "`{}` must appear exactly once in covariate_columns (found {hits})",
                    self.effect_modifier
                ),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self
            .covariate_columns
            .iter()
            .chain([&self.s_column, &self.a_column, &self.y_column])
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::config("schema", format!("column `{name}` is referenced twice")));
            }
        }
        Ok(())
    }

    fn effect_modifier_index(&self) -> usize {
        self.covariate_columns
            .iter()
            .position(|c| *c == self.effect_modifier)
            .expect("validated schema")
    }
}

/// Trial-eligible cohort. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    effect_modifier: usize,
    s: Vec<u8>,
    a: Vec<Option<u8>>,
    y: Vec<Option<f64>>,
    outcome_kind: OutcomeKind,
}

impl Cohort {
    /// Builds a cohort, checking the nested-trial data structure row by row.
    /// Row numbers in errors are 1-based.
    pub fn new(
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        effect_modifier: usize,
        s: Vec<u8>,
        a: Vec<Option<u8>>,
        y: Vec<Option<f64>>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if s.len() != n || a.len() != n || y.len() != n {
            return Err(Error::Cohort(format!(
                "length mismatch: {} covariate rows, {} s, {} a, {} y",
                n,
                s.len(),
                a.len(),
                y.len()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Cohort("covariate names do not match covariate columns".into()));
        }
        if effect_modifier >= covariates.ncols() {
            return Err(Error::Cohort("effect modifier index out of range".into()));
        }
        for i in 0..n {
            let row = i + 1;
            if let Some(j) = (0..covariates.ncols()).find(|&j| !covariates[(i, j)].is_finite()) {
                return Err(Error::Data {
                    row,
                    message: format!("covariate `{}` is missing or not finite", covariate_names[j]),
                });
            }
            match s[i] {
                0 => {
                    if a[i].is_some() || y[i].is_some() {
                        return Err(Error::Data {
                            row,
                            message: "treatment/outcome present on a non-participant (s = 0) row".into(),
                        });
                    }
                }
                1 => {
                    match a[i] {
                        Some(0) | Some(1) => {}
                        Some(other) => {
                            return Err(Error::Data { row, message: format!("treatment {other} not in {{0,1}}") })
                        }
                        None => return Err(Error::Data { row, message: "trial participant without treatment".into() }),
                    }
                    match y[i] {
                        None => return Err(Error::Data { row, message: "trial participant without outcome".into() }),
                        Some(v) if !v.is_finite() => {
                            return Err(Error::Data { row, message: "outcome is not finite".into() })
                        }
                        Some(v) if outcome_kind == OutcomeKind::Binary && v != 0.0 && v != 1.0 => {
                            return Err(Error::Data { row, message: format!("binary outcome {v} not in {{0,1}}") })
                        }
                        Some(_) => {}
                    }
                }
                other => return Err(Error::Parse { row, message: format!("s = {other} not in {{0,1}}") }),
            }
        }
        Ok(Cohort { covariates, covariate_names, effect_modifier, s, a, y, outcome_kind })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn n_trial(&self) -> usize {
        self.s.iter().filter(|&&s| s == 1).count()
    }

    pub fn n_nontrial(&self) -> usize {
        self.n() - self.n_trial()
    }

    pub fn n_features(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn effect_modifier_index(&self) -> usize {
        self.effect_modifier
    }

    /// Effect modifier values `V_i` for all units.
    pub fn effect_modifier(&self) -> Vec<f64> {
        self.covariates.column(self.effect_modifier).iter().copied().collect()
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn a(&self) -> &[Option<u8>] {
        &self.a
    }

    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn trial_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i] == 1).collect()
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.a.iter().filter(|a| **a == Some(1)).count();
        let control = self.a.iter().filter(|a| **a == Some(0)).count();
        (treated, control)
    }

    /// The `S = 1` rows only, in their original order.
    pub fn trial_subset(&self) -> Cohort {
        let idx = self.trial_indices();
        self.select(&idx)
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Cohort {
        Cohort {
            covariates: self.covariates.select_rows(idx),
            covariate_names: self.covariate_names.clone(),
            effect_modifier: self.effect_modifier,
            s: idx.iter().map(|&i| self.s[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            outcome_kind: self.outcome_kind,
        }
    }

    /// Requirements for running the estimator on this cohort: trial
    /// participants in both arms and at least one non-participant.
    pub fn check_estimable(&self) -> Result<()> {
        if self.n_trial() == 0 {
            return Err(Error::Cohort("no trial participants (s = 1)".into()));
        }
        if self.n_nontrial() == 0 {
            return Err(Error::Cohort("no non-participants (s = 0)".into()));
        }
        let (treated, control) = self.arm_counts();
        if treated == 0 || control == 0 {
            return Err(Error::Cohort(format!(
                "trial needs both arms (treated = {treated}, control = {control})"
            )));
        }
        Ok(())
    }
}

fn parse_cell(raw: &str) -> Option<&str> {
    let t = raw.trim();
    if t.is_empty() || t == "NA" {
        None
    } else {
        Some(t)
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::Parse { row, message: format!("column `{column}`: `{raw}` is not a number") })
}

fn parse_indicator(raw: Option<&str>, row: usize, column: &str) -> Result<Option<u8>> {
    let Some(raw) = raw else { return Ok(None) };
    let x = parse_number(raw, row, column)?;
    if x == 0.0 {
        Ok(Some(0))
    } else if x == 1.0 {
        Ok(Some(1))
    } else {
        Err(Error::Parse { row, message: format!("column `{column}`: {raw} not in {{0,1}}") })
    }
}

/// Reads a cohort from CSV. Empty cells and `NA` denote absence.
pub fn read_cohort<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Cohort> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let cov_idx: Vec<usize> = schema.covariate_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let s_idx = find(&schema.s_column)?;
    let a_idx = find(&schema.a_column)?;
    let y_idx = find(&schema.y_column)?;

    let p = cov_idx.len();
    let mut values = Vec::new();
    let (mut s, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |j: usize| parse_cell(record.get(j).unwrap_or(""));
        for (&j, name) in cov_idx.iter().zip(&schema.covariate_columns) {
            let raw = cell(j)
                .ok_or_else(|| Error::Data { row, message: format!("covariate `{name}` is missing") })?;
            let x = parse_number(raw, row, name)?;
            if !x.is_finite() {
                return Err(Error::Data { row, message: format!("covariate `{name}` is not finite") });
            }
            values.push(x);
        }
        let si = parse_indicator(cell(s_idx), row, &schema.s_column)?
            .ok_or_else(|| Error::Parse { row, message: format!("column `{}` is missing", schema.s_column) })?;
        let mut ai = parse_indicator(cell(a_idx), row, &schema.a_column)?;
        let mut yi = match cell(y_idx) {
            Some(raw) => Some(parse_number(raw, row, &schema.y_column)?),
            None => None,
        };
        if si == 0 && (ai.is_some() || yi.is_some()) {
            if schema.lenient {
                log::warn!("row {row}: dropping treatment/outcome recorded for a non-participant");
                ai = None;
                yi = None;
            } else {
                return Err(Error::Data {
                    row,
                    message: "treatment/outcome present on a non-participant (s = 0) row".into(),
                });
            }
        }
        s.push(si);
        a.push(ai);
        y.push(yi);
    }
    let n = s.len();
    let covariates = DMatrix::from_row_slice(n, p, &values);
    let cohort = Cohort::new(
        covariates,
        schema.covariate_columns.clone(),
        schema.effect_modifier_index(),
        s,
        a,
        y,
        schema.outcome_kind,
    )?;
    cohort.check_estimable()?;
    Ok(cohort)
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    read_cohort(std::io::BufReader::new(file), schema)
}

/// Writes a cohort as CSV using the schema's column names. Numbers use the
/// shortest decimal form that parses back to the same `f64`.
pub fn write_cohort<W: Write>(cohort: &Cohort, schema: &SchemaConfig, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.covariate_columns.iter().map(String::as_str).collect();
    header.extend([schema.s_column.as_str(), schema.a_column.as_str(), schema.y_column.as_str()]);
    w.write_record(&header)?;
    for i in 0..cohort.n() {
        let mut rec: Vec<String> = cohort.covariates.row(i).iter().map(|x| x.to_string()).collect();
        rec.push(cohort.s[i].to_string());
        rec.push(cohort.a[i].map(|a| a.to_string()).unwrap_or_default());
        rec.push(cohort.y[i].map(|y| y.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRange {
    pub min: f64,
    pub max: f64,
}

impl ProbabilityRange {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        values.fold(None, |acc, x| match acc {
            None => Some(ProbabilityRange { min: x, max: x }),
            Some(r) => Some(ProbabilityRange { min: r.min.min(x), max: r.max.max(x) }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub mean_trial: Option<f64>,
    pub sd_trial: Option<f64>,
    pub mean_nontrial: Option<f64>,
    pub sd_nontrial: Option<f64>,
}

/// Empirical overlap summary for trial participation and treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub n_trial: usize,
    pub n_nontrial: usize,
    /// Range of fitted `P(S = 1 | X)` over the cohort (before clipping).
    pub selection_range: ProbabilityRange,
    /// Range of fitted `P(A = 1 | X, S = 1)` over trial participants.
    pub treatment_range: ProbabilityRange,
    pub clip_threshold: f64,
    /// Units whose fitted selection probability is below `clip_threshold`.
    pub count_below_threshold: usize,
    pub covariates: Vec<CovariateBalance>,
}

/// Sums in sorted order so the result does not depend on row order.
fn mean_sd(values: &mut [f64]) -> (Option<f64>, Option<f64>) {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        Some((values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(mean), sd)
}

/// Overlap diagnostics from raw (unclipped) fitted probabilities.
pub fn diagnose_from_predictions(
    cohort: &Cohort,
    selection: &[f64],
    treatment: &[f64],
    clip_threshold: f64,
) -> Result<DiagnosticsReport> {
    let n = cohort.n();
    if selection.len() != n || treatment.len() != n {
        return Err(Error::Input("prediction vectors must have one entry per unit".into()));
    }
    let selection_range = ProbabilityRange::of(selection.iter().copied())
        .ok_or_else(|| Error::Input("empty cohort".into()))?;
    let treatment_range = ProbabilityRange::of((0..n).filter(|&i| cohort.s[i] == 1).map(|i| treatment[i]))
        .ok_or_else(|| Error::Input("no trial participants".into()))?;
    let count_below_threshold = selection.iter().filter(|&&p| p < clip_threshold).count();
    let covariates = (0..cohort.n_features())
        .map(|j| {
            let col = cohort.covariates.column(j);
            let mut trial: Vec<f64> = (0..n).filter(|&i| cohort.s[i] == 1).map(|i| col[i]).collect();
            let mut nontrial: Vec<f64> = (0..n).filter(|&i| cohort.s[i] == 0).map(|i| col[i]).collect();
            let (mean_trial, sd_trial) = mean_sd(&mut trial);
            let (mean_nontrial, sd_nontrial) = mean_sd(&mut nontrial);
            CovariateBalance { name: cohort.covariate_names[j].clone(), mean_trial, sd_trial, mean_nontrial, sd_nontrial }
        })
        .collect();
    Ok(DiagnosticsReport {
        n,
        n_trial: cohort.n_trial(),
        n_nontrial: cohort.n_nontrial(),
        selection_range,
        treatment_range,
        clip_threshold,
        count_below_threshold,
        covariates,
    })
}

/// Overlap diagnostics from cross-fitted nuisance models. Never mutates data.
pub fn diagnose_overlap(cohort: &Cohort, nuisance: &crate::crossfit::NuisanceFits) -> Result<DiagnosticsReport> {
    let raw = nuisance.raw();
    diagnose_from_predictions(cohort, &raw.selection, &raw.treatment, nuisance.clip_epsilon())
}
