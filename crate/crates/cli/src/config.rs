//! Strict JSON run configuration. Unknown keys are rejected and every field
//! is validated before any data is read.

use std::path::{Path, PathBuf};

use catgen_core::crossfit::NuisanceConfig;
use catgen_core::data::{OutcomeKind, SchemaConfig};
use catgen_core::simulation::{DgpSpec, Estimator, OutcomeModel, StudyConfig};
use catgen_core::smoother::{linear_grid, BandwidthSpec, KernelSpec};
use catgen_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schema: Option<SchemaConfig>,
    /// Cohort CSV, relative to the config file.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub nuisance: Option<NuisanceConfig>,
    #[serde(default)]
    pub smoother: SmootherConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub bandwidth: BandwidthSpec,
    #[serde(default)]
    pub grid: GridSpec,
}

/// Evaluation points for `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Equispaced between two empirical quantiles of the effect modifier.
    Quantiles { points: usize, lower: f64, upper: f64 },
    Range { lower: f64, upper: f64, points: usize },
    Values { values: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles { points: 41, lower: 0.05, upper: 0.95 }
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let field = "smoother.grid";
        match self {
            GridSpec::Quantiles { points, lower, upper } => {
                if *points < 1 {
                    return Err(Error::config(format!("{field}.points"), "must be >= 1"));
                }
                if !(0.0 <= *lower && lower < upper && *upper <= 1.0) {
                    return Err(Error::config(field, "quantiles must satisfy 0 <= lower < upper <= 1"));
                }
            }
            GridSpec::Range { lower, upper, points } => {
                if *points < 1 {
                    return Err(Error::config(format!("{field}.points"), "must be >= 1"));
                }
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::config(field, "range must satisfy lower < upper"));
                }
            }
            GridSpec::Values { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("{field}.values"), "must be a nonempty list of finite numbers"));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            GridSpec::Quantiles { points, lower, upper } => {
                if v.is_empty() {
                    return Err(Error::Input("no effect-modifier values".into()));
                }
                let mut sorted = v.to_vec();
                sorted.sort_by(f64::total_cmp);
                Ok(linear_grid(quantile(&sorted, *lower), quantile(&sorted, *upper), *points))
            }
            GridSpec::Range { lower, upper, points } => Ok(linear_grid(*lower, *upper, *points)),
            GridSpec::Values { values } => Ok(values.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the config file.
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("catgen-out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_output_dir(), formats: default_formats() }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Scenario matrix: every combination of `n`, `n_s1` and `outcome_kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub n: Vec<usize>,
    pub n_s1: Vec<usize>,
    pub outcome_kind: Vec<OutcomeKind>,
}

/// Changes applied on top of the default designs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpOverrides {
    pub selection_coefficients: Option<[f64; 3]>,
    pub treatment_probability: Option<f64>,
    pub noise_sd: Option<f64>,
    pub exact_trial_size: Option<bool>,
    pub calibration_draws: Option<usize>,
    pub continuous_outcome: Option<OutcomeModel>,
    pub binary_outcome: Option<OutcomeModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub replicates: usize,
    pub scenarios: ScenarioGrid,
    #[serde(default)]
    pub dgp: DgpOverrides,
    /// Nuisance settings for the study; falls back to the top-level block,
    /// then to the study default (known randomization probability 0.5).
    #[serde(default)]
    pub nuisance: Option<NuisanceConfig>,
    pub estimators: Option<Vec<Estimator>>,
    pub grid_points: Option<usize>,
    pub truth_mc_size: Option<usize>,
    pub trim_fraction_per_tail: Option<f64>,
    pub trim_n_s1: Option<Vec<usize>>,
    /// Also write one CSV of curves per replicate.
    #[serde(default)]
    pub replicate_curves: bool,
}

impl SimulationConfig {
    pub fn designs(&self) -> Vec<DgpSpec> {
        let o = &self.dgp;
        let mut designs = Vec::new();
        for &kind in &self.scenarios.outcome_kind {
            for &n in &self.scenarios.n {
                for &n_s1 in &self.scenarios.n_s1 {
                    let mut d = DgpSpec::default_for(kind, n, n_s1);
                    if let Some(b) = o.selection_coefficients {
                        d.selection_coefficients = b;
                    }
                    if let Some(p) = o.treatment_probability {
                        d.treatment_probability = p;
                    }
                    if let Some(s) = o.noise_sd {
                        if kind == OutcomeKind::Continuous {
                            d.noise_sd = s;
                        }
                    }
                    if let Some(e) = o.exact_trial_size {
                        d.exact_trial_size = e;
                    }
                    if let Some(c) = o.calibration_draws {
                        d.calibration_draws = c;
                    }
                    match (kind, o.continuous_outcome, o.binary_outcome) {
                        (OutcomeKind::Continuous, Some(m), _) | (OutcomeKind::Binary, _, Some(m)) => d.outcome = m,
                        _ => {}
                    }
                    designs.push(d);
                }
            }
        }
        designs
    }

    pub fn study(&self, bandwidth: &BandwidthSpec, fallback: Option<&NuisanceConfig>) -> StudyConfig {
        let mut study = StudyConfig::new(self.replicates);
        if let Some(n) = self.nuisance.as_ref().or(fallback) {
            study.nuisance = n.clone();
        }
        study.bandwidth = bandwidth.clone();
        if let Some(e) = &self.estimators {
            study.estimators = e.clone();
        }
        if let Some(g) = self.grid_points {
            study.grid_points = g;
        }
        if let Some(m) = self.truth_mc_size {
            study.truth_mc_size = m;
        }
        if let Some(t) = self.trim_fraction_per_tail {
            study.trim_fraction_per_tail = t;
        }
        if let Some(t) = &self.trim_n_s1 {
            study.trim_n_s1 = t.clone();
        }
        study
    }

    fn validate(&self, bandwidth: &BandwidthSpec, fallback: Option<&NuisanceConfig>) -> Result<()> {
        let s = &self.scenarios;
        for (field, empty) in [("n", s.n.is_empty()), ("n_s1", s.n_s1.is_empty()), ("outcome_kind", s.outcome_kind.is_empty())] {
            if empty {
                return Err(Error::config(format!("simulation.scenarios.{field}"), "must list at least one value"));
            }
        }
        self.study(bandwidth, fallback).validate()?;
        for d in self.designs() {
            d.validate()?;
        }
        Ok(())
    }
}

/// Which sections a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Cohort,
    Simulation,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            let field = message
                .split_once("unknown field `")
                .and_then(|(_, rest)| rest.split_once('`'))
                .map_or("config", |(name, _)| name)
                .to_string();
            Error::Config { field, message }
        })
    }

    pub fn nuisance(&self) -> NuisanceConfig {
        self.nuisance.clone().unwrap_or_default()
    }

    pub fn validate(&self, needs: Needs) -> Result<()> {
        if let Some(n) = &self.nuisance {
            n.validate()?;
        }
        self.smoother.bandwidth.validate()?;
        self.smoother.grid.validate()?;
        if self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "at least one format is required"));
        }
        match needs {
            Needs::Cohort => {
                let schema = self.schema.as_ref().ok_or_else(|| Error::config("schema", "required for this command"))?;
                schema.validate()?;
                if self.data.is_none() {
                    return Err(Error::config("data", "required for this command"));
                }
            }
            Needs::Simulation => {
                let sim = self.simulation.as_ref().ok_or_else(|| Error::config("simulation", "required for this command"))?;
                sim.validate(&self.smoother.bandwidth, self.nuisance.as_ref())?;
            }
        }
        Ok(())
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
