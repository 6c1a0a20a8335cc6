//! Monte Carlo study of the estimator on synthetic nested trials.
//!
//! Each replicate draws a cohort, builds one set of cross-fitted
//! pseudo-outcomes, and feeds them to every second-stage estimator; the
//! trial-only comparator reruns the pipeline on participants alone.

mod dgp;
mod metrics;
mod study;
mod truth;

pub use dgp::{CalibratedDgp, DgpSpec, LinearPredictor, OutcomeModel, CALIBRATION_SEED, DEFAULT_SELECTION};
pub use metrics::{integrated_metrics, IntegratedMetrics, ReplicateCurve};
pub use study::{
    evaluation_grid, run_replicate, run_scenario, run_study, Estimator, EstimatorReport, ReplicateOutcome, ScenarioOutcome,
    ScenarioReport, SimulationReport, StudyConfig, CENTRAL_90_Z,
};
pub use truth::{simulated_effect_average, true_cate, true_cate_curve, TruthCurve, TRUTH_SHARD_SIZE};
