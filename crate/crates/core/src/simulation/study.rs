use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dgp::{CalibratedDgp, DgpSpec};
use super::metrics::{integrated_metrics, IntegratedMetrics, ReplicateCurve};
use super::truth::{true_cate_curve, TruthCurve};
use crate::crossfit::{build_pseudo_outcomes, cross_fit, NuisanceConfig, PseudoTarget, SelectionModel, TreatmentProbability};
use crate::data::{Cohort, OutcomeKind};
use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::rng::{derive_seed, stream};
use crate::smoother::{estimate_cate_curve, fit_global_polynomial, linear_grid, smoothing_bias_reference, BandwidthSpec, CateCurve, KernelSpec};

/// Upper 5% point of the standard normal; the default grid spans the central
/// 90% of `V ~ N(0, 1)`.
pub const CENTRAL_90_Z: f64 = 1.6448536269514722;

pub fn evaluation_grid(points: usize) -> Vec<f64> {
    linear_grid(-CENTRAL_90_Z, CENTRAL_90_Z, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Local linear smoother with cross-validated bandwidth.
    ProposedLocalLinear,
    /// Least squares of the pseudo-outcomes on `(1, V)`.
    NaiveLinear,
    /// Least squares on the true basis `(1, V, V^2)`; continuous outcomes only.
    OracleForm,
    /// The proposed pipeline on trial participants only, with `p(S = 1 | X) = 1`.
    TrialOnly,
}

impl Estimator {
    pub const ALL: [Estimator; 4] =
        [Estimator::ProposedLocalLinear, Estimator::NaiveLinear, Estimator::OracleForm, Estimator::TrialOnly];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::ProposedLocalLinear => "proposed_local_linear",
            Estimator::NaiveLinear => "naive_linear",
            Estimator::OracleForm => "oracle_form",
            Estimator::TrialOnly => "trial_only",
        }
    }

    fn applies_to(self, kind: OutcomeKind) -> bool {
        self != Estimator::OracleForm || kind == OutcomeKind::Continuous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_study_nuisance")]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub bandwidth: BandwidthSpec,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    pub replicates: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Monte Carlo size for binary-outcome truth.
    #[serde(default = "default_truth_mc_size")]
    pub truth_mc_size: usize,
    #[serde(default = "default_trim")]
    pub trim_fraction_per_tail: f64,
    /// Trial sizes whose scenarios are trimmed.
    #[serde(default = "default_trim_n_s1")]
    pub trim_n_s1: Vec<usize>,
}

fn default_study_nuisance() -> NuisanceConfig {
    NuisanceConfig { treatment_probability: TreatmentProbability::Known(0.5), ..NuisanceConfig::default() }
}
fn default_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}
fn default_grid_points() -> usize {
    41
}
fn default_truth_mc_size() -> usize {
    10_000_000
}
fn default_trim() -> f64 {
    0.025
}
fn default_trim_n_s1() -> Vec<usize> {
    vec![125]
}

impl StudyConfig {
    pub fn new(replicates: usize) -> Self {
        StudyConfig {
            nuisance: default_study_nuisance(),
            bandwidth: BandwidthSpec::default(),
            estimators: default_estimators(),
            replicates,
            grid_points: default_grid_points(),
            truth_mc_size: default_truth_mc_size(),
            trim_fraction_per_tail: default_trim(),
            trim_n_s1: default_trim_n_s1(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nuisance.validate()?;
        self.bandwidth.validate()?;
        if self.replicates == 0 {
            return Err(Error::config("simulation.replicates", "must be >= 1"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("simulation.grid_points", "must be >= 2"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("simulation.estimators", "at least one estimator is required"));
        }
        if self.truth_mc_size == 0 {
            return Err(Error::config("simulation.truth_mc_size", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.trim_fraction_per_tail) {
            return Err(Error::config("simulation.trim_fraction_per_tail", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    fn trims(&self, dgp: &DgpSpec) -> bool {
        self.trim_fraction_per_tail > 0.0 && self.trim_n_s1.contains(&dgp.n_s1_target)
    }
}

/// One replicate's curves, keyed by estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub n_s1: usize,
    pub bandwidth: Option<f64>,
    pub curves: Vec<(Estimator, ReplicateCurve)>,
}

impl ReplicateOutcome {
    pub fn curve(&self, estimator: Estimator) -> Option<&ReplicateCurve> {
        self.curves.iter().find(|(e, _)| *e == estimator).map(|(_, c)| c)
    }
}

fn to_replicate_curve(curve: CateCurve, truth: Option<&TruthCurve>) -> ReplicateCurve {
    let smoothed_target = match (curve.bandwidth, truth) {
        (Some(_), Some(t)) => Some(
            (0..curve.len())
                .map(|k| t.theta[k] + smoothing_bias_reference(t.second_derivative[k], curve.point_bandwidth[k], KernelSpec::Epanechnikov))
                .collect(),
        ),
        _ => None,
    };
    ReplicateCurve { theta_hat: curve.theta_hat, ci_lower: curve.ci_lower, ci_upper: curve.ci_upper, smoothed_target }
}

fn trial_only_curve(cohort: &Cohort, study: &StudyConfig, grid: &[f64], seed: u64) -> Result<CateCurve> {
    let trial = cohort.trial_subset();
    let config = NuisanceConfig { selection: SelectionModel::AllParticipants, ..study.nuisance.clone() };
    let fits = cross_fit(&trial, &config, derive_seed(seed, &[stream::NUISANCE, 1]))?;
    let pseudo = build_pseudo_outcomes(&trial, &fits, PseudoTarget::Cate)?;
    estimate_cate_curve(&pseudo, grid, &study.bandwidth, derive_seed(seed, &[stream::BANDWIDTH, 1]))
}

/// Draws one cohort and runs every requested estimator on it.
pub fn run_replicate(dgp: &CalibratedDgp, truth: &TruthCurve, study: &StudyConfig, index: usize, seed: u64) -> Result<ReplicateOutcome> {
    let cohort = dgp.generate_cohort(seed)?;
    cohort.check_estimable()?;
    let grid = &truth.grid;
    let kind = dgp.spec.outcome_kind;
    let wanted: Vec<Estimator> = study.estimators.iter().copied().filter(|e| e.applies_to(kind)).collect();
    let mut curves = Vec::new();
    let mut bandwidth = None;

    if wanted.iter().any(|&e| e != Estimator::TrialOnly) {
        let fits = cross_fit(&cohort, &study.nuisance, seed)?;
        let pseudo = build_pseudo_outcomes(&cohort, &fits, PseudoTarget::Cate)?;
        for &estimator in &wanted {
            let curve = match estimator {
                Estimator::ProposedLocalLinear => {
                    let c = estimate_cate_curve(&pseudo, grid, &study.bandwidth, derive_seed(seed, &[stream::BANDWIDTH]))?;
                    bandwidth = c.bandwidth;
                    c
                }
                Estimator::NaiveLinear => fit_global_polynomial(&pseudo.v, &pseudo.xi, 1, grid)?,
                Estimator::OracleForm => fit_global_polynomial(&pseudo.v, &pseudo.xi, 2, grid)?,
                Estimator::TrialOnly => continue,
            };
            curves.push((estimator, to_replicate_curve(curve, Some(truth))));
        }
    }
    if wanted.contains(&Estimator::TrialOnly) {
        let curve = trial_only_curve(&cohort, study, grid, seed)?;
        curves.push((Estimator::TrialOnly, to_replicate_curve(curve, Some(truth))));
    }
    curves.sort_by_key(|(e, _)| *e);
    Ok(ReplicateOutcome { index, seed, n_s1: cohort.n_trial(), bandwidth, curves })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: Estimator,
    #[serde(flatten)]
    pub metrics: IntegratedMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub outcome_kind: OutcomeKind,
    pub n: usize,
    pub n_s1_target: usize,
    pub selection_intercept: f64,
    pub replicates_requested: usize,
    pub replicates_completed: usize,
    pub mean_n_s1: f64,
    /// Mean cross-validated bandwidth of the proposed estimator.
    pub mean_bandwidth: Option<f64>,
    pub trimmed: bool,
    pub estimators: Vec<EstimatorReport>,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
}

impl ScenarioReport {
    pub fn metrics(&self, estimator: Estimator) -> Option<&IntegratedMetrics> {
        self.estimators.iter().find(|r| r.estimator == estimator).map(|r| &r.metrics)
    }
}

/// A scenario's report together with the per-replicate curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub replicates: Vec<ReplicateOutcome>,
    pub truth: TruthCurve,
}

impl ScenarioOutcome {
    /// One CSV per replicate (`estimator,v,theta_hat,ci_lower,ci_upper`),
    /// as `(file name, contents)`.
    pub fn replicate_curve_files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let r = &self.report;
        let kind = match r.outcome_kind {
            OutcomeKind::Continuous => "continuous",
            OutcomeKind::Binary => "binary",
        };
        let mut files = Vec::with_capacity(self.replicates.len());
        for rep in &self.replicates {
            let name = format!("{kind}_n{}_s{}_rep{:04}.csv", r.n, r.n_s1_target, rep.index);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["estimator", "v", "theta_hat", "ci_lower", "ci_upper"])?;
            for (estimator, curve) in &rep.curves {
                for k in 0..r.grid.len() {
                    w.write_record([
                        estimator.name().to_string(),
                        r.grid[k].to_string(),
                        curve.theta_hat[k].to_string(),
                        curve.ci_lower[k].to_string(),
                        curve.ci_upper[k].to_string(),
                    ])?;
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            files.push((name, bytes));
        }
        Ok(files)
    }

    pub fn write_replicate_curves(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in self.replicate_curve_files()? {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn replicate_seed(master: u64, dgp: &DgpSpec, r: usize) -> u64 {
    let kind = match dgp.outcome_kind {
        OutcomeKind::Continuous => 0,
        OutcomeKind::Binary => 1,
    };
    derive_seed(master, &[stream::REPLICATE, kind, dgp.n as u64, dgp.n_s1_target as u64, r as u64])
}

/// Runs all replicates of one design against a precomputed truth.
pub fn run_scenario_with_truth(dgp: &DgpSpec, truth: TruthCurve, study: &StudyConfig, seed: u64) -> Result<ScenarioOutcome> {
    study.validate()?;
    let calibrated = dgp.calibrate()?;
    let results = map_range(study.replicates, |r| run_replicate(&calibrated, &truth, study, r, replicate_seed(seed, dgp, r)));
    let mut replicates = Vec::with_capacity(results.len());
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(outcome) => replicates.push(outcome),
            Err(e) => log::warn!("replicate {r} (n = {}, n_s1 = {}) failed: {e}", dgp.n, dgp.n_s1_target),
        }
    }
    if replicates.len() < 2 {
        return Err(Error::Fit(format!("only {} of {} replicates completed", replicates.len(), study.replicates)));
    }
    let trimmed = study.trims(dgp);
    let trim = if trimmed { study.trim_fraction_per_tail } else { 0.0 };
    let mut estimators = Vec::new();
    let mut present: Vec<Estimator> = replicates[0].curves.iter().map(|(e, _)| *e).collect();
    present.sort();
    for estimator in present {
        let curves: Vec<ReplicateCurve> = replicates.iter().filter_map(|r| r.curve(estimator).cloned()).collect();
        estimators.push(EstimatorReport { estimator, metrics: integrated_metrics(&curves, &truth.theta, trim)? });
    }
    let completed = replicates.len() as f64;
    let bandwidths: Vec<f64> = replicates.iter().filter_map(|r| r.bandwidth).collect();
    let report = ScenarioReport {
        outcome_kind: dgp.outcome_kind,
        n: dgp.n,
        n_s1_target: dgp.n_s1_target,
        selection_intercept: calibrated.selection_intercept,
        replicates_requested: study.replicates,
        replicates_completed: replicates.len(),
        mean_n_s1: replicates.iter().map(|r| r.n_s1 as f64).sum::<f64>() / completed,
        mean_bandwidth: (!bandwidths.is_empty()).then(|| bandwidths.iter().sum::<f64>() / bandwidths.len() as f64),
        trimmed,
        estimators,
        grid: truth.grid.clone(),
        truth: truth.theta.clone(),
    };
    Ok(ScenarioOutcome { report, replicates, truth })
}

fn truth_for(dgp: &DgpSpec, study: &StudyConfig, seed: u64) -> TruthCurve {
    true_cate_curve(dgp, &evaluation_grid(study.grid_points), study.truth_mc_size, derive_seed(seed, &[stream::TRUTH]))
}

pub fn run_scenario(dgp: &DgpSpec, study: &StudyConfig, seed: u64) -> Result<ScenarioOutcome> {
    study.validate()?;
    dgp.validate()?;
    run_scenario_with_truth(dgp, truth_for(dgp, study, seed), study, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub scenarios: Vec<ScenarioReport>,
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per scenario and estimator.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "outcome_kind",
            "n",
            "n_s1_target",
            "estimator",
            "replicates",
            "integrated_abs_bias",
            "integrated_rmse",
            "coverage_truth",
            "coverage_smoothed",
            "coverage_mean_curve",
            "trimmed",
        ])?;
        for s in &self.scenarios {
            for e in &s.estimators {
                let m = &e.metrics;
                w.write_record([
                    serde_json::to_value(s.outcome_kind)?.as_str().unwrap_or_default().to_string(),
                    s.n.to_string(),
                    s.n_s1_target.to_string(),
                    e.estimator.name().to_string(),
                    m.replicates.to_string(),
                    m.integrated_abs_bias.to_string(),
                    m.integrated_rmse.to_string(),
                    m.coverage_truth.to_string(),
                    m.coverage_smoothed.map(|c| c.to_string()).unwrap_or_default(),
                    m.coverage_mean_curve.to_string(),
                    s.trimmed.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every design, sharing truth curves between designs with the same
/// outcome model.
pub fn run_study(designs: &[DgpSpec], study: &StudyConfig, seed: u64) -> Result<(SimulationReport, Vec<ScenarioOutcome>)> {
    study.validate()?;
    let mut truths: HashMap<String, TruthCurve> = HashMap::new();
    let mut outcomes = Vec::with_capacity(designs.len());
    for dgp in designs {
        dgp.validate()?;
        let key = serde_json::to_string(&(dgp.outcome_kind, dgp.outcome, dgp.noise_sd))?;
        let truth = truths.entry(key).or_insert_with(|| truth_for(dgp, study, seed)).clone();
        outcomes.push(run_scenario_with_truth(dgp, truth, study, seed)?);
    }
    let report = SimulationReport { seed, scenarios: outcomes.iter().map(|o| o.report.clone()).collect() };
    Ok((report, outcomes))
}
