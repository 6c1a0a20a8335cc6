//! Synthetic nested-trial cohorts with known treatment-effect curves.
//!
//! Covariates are iid standard normal `X1, X2, X3`; the effect modifier is
//! `V = X2`. Participation follows a logistic model whose intercept is
//! calibrated to the target expected trial size; treatment is randomized among
//! participants. Outcomes have linear predictor
//! `eta(a) = baseline(X) + a * effect(X)`, identity link for continuous and
//! logit link for binary outcomes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, OutcomeKind};
use crate::error::{Error, Result};
use crate::learners::expit;
use crate::rng::{stream, task_rng, TaskRng};
use nalgebra::DMatrix;

/// Fixed seed for the intercept calibration draws, shared by all runs so the
/// calibrated intercept depends only on the design.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA11_B8A7_10A5;

/// `c + b1 X1 + b2 X2 + b3 X3 + q X2^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub x: [f64; 3],
    #[serde(default)]
    pub x2_squared: f64,
}

impl LinearPredictor {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        self.intercept + self.x[0] * x[0] + self.x[1] * x[1] + self.x[2] * x[2] + self.x2_squared * x[1] * x[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub baseline: LinearPredictor,
    /// Added to the linear predictor under treatment.
    pub effect: LinearPredictor,
}

impl OutcomeModel {
    /// `Y = 1 + X1 + X2 + X3 + A (1 + X2 - 0.5 X2^2) + noise`.
    pub fn continuous_default() -> Self {
        OutcomeModel {
            baseline: LinearPredictor { intercept: 1.0, x: [1.0, 1.0, 1.0], x2_squared: 0.0 },
            effect: LinearPredictor { intercept: 1.0, x: [0.0, 1.0, 0.0], x2_squared: -0.5 },
        }
    }

    /// `logit P(Y = 1) = -0.5 + 0.5 X1 + 0.5 X2 + 0.3 X3 + A (0.8 + 1.5 X1 + 0.6 X2 - 0.8 X2^2)`.
    pub fn binary_default() -> Self {
        OutcomeModel {
            baseline: LinearPredictor { intercept: -0.5, x: [0.5, 0.5, 0.3], x2_squared: 0.0 },
            effect: LinearPredictor { intercept: 0.8, x: [1.5, 0.6, 0.0], x2_squared: -0.8 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub outcome_kind: OutcomeKind,
    /// Cohort size.
    pub n: usize,
    /// Expected number of trial participants.
    pub n_s1_target: usize,
    /// Participation slopes on `(X1, X2, X3)`; the intercept is calibrated.
    pub selection_coefficients: [f64; 3],
    pub treatment_probability: f64,
    pub outcome: OutcomeModel,
    /// Residual standard deviation (continuous outcomes).
    pub noise_sd: f64,
    /// Draw exactly `n_s1_target` participants (weighted sampling without
    /// replacement) instead of independent Bernoulli participation.
    #[serde(default)]
    pub exact_trial_size: bool,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
}

fn default_calibration_draws() -> usize {
    1_000_000
}

pub const DEFAULT_SELECTION: [f64; 3] = [1.0, 0.3, 0.0];

impl DgpSpec {
    pub fn continuous(n: usize, n_s1_target: usize) -> Self {
        DgpSpec {
            outcome_kind: OutcomeKind::Continuous,
            n,
            n_s1_target,
            selection_coefficients: DEFAULT_SELECTION,
            treatment_probability: 0.5,
            outcome: OutcomeModel::continuous_default(),
            noise_sd: 1.0,
            exact_trial_size: false,
            calibration_draws: default_calibration_draws(),
        }
    }

    pub fn binary(n: usize, n_s1_target: usize) -> Self {
        DgpSpec { outcome_kind: OutcomeKind::Binary, outcome: OutcomeModel::binary_default(), noise_sd: 0.0, ..Self::continuous(n, n_s1_target) }
    }

    pub fn default_for(kind: OutcomeKind, n: usize, n_s1_target: usize) -> Self {
        match kind {
            OutcomeKind::Continuous => Self::continuous(n, n_s1_target),
            OutcomeKind::Binary => Self::binary(n, n_s1_target),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::config("simulation.n", "cohort size must be >= 4"));
        }
        if self.n_s1_target == 0 || self.n_s1_target >= self.n {
            return Err(Error::config("simulation.n_s1", format!("must lie in 1..n (n = {})", self.n)));
        }
        if !(self.treatment_probability > 0.0 && self.treatment_probability < 1.0) {
            return Err(Error::config("simulation.treatment_probability", "must lie in (0, 1)"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("simulation.noise_sd", "must be finite and >= 0"));
        }
        if self.calibration_draws == 0 {
            return Err(Error::config("simulation.calibration_draws", "must be >= 1"));
        }
        Ok(())
    }

    fn selection_slope(&self, x: &[f64; 3]) -> f64 {
        self.selection_coefficients.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    /// Calibrates the participation intercept so that the mean participation
    /// probability over `calibration_draws` covariate draws equals
    /// `n_s1_target / n`.
    pub fn calibrate(&self) -> Result<CalibratedDgp> {
        self.validate()?;
        let mut rng = task_rng(CALIBRATION_SEED, &[stream::CALIBRATION]);
        let slopes: Vec<f64> = (0..self.calibration_draws).map(|_| self.selection_slope(&draw_x(&mut rng))).collect();
        let target = self.n_s1_target as f64 / self.n as f64;
        let mean_probability = |b0: f64| slopes.iter().map(|s| expit(b0 + s)).sum::<f64>() / slopes.len() as f64;
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mean_probability(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(CalibratedDgp { spec: self.clone(), selection_intercept: 0.5 * (lo + hi) })
    }
}

pub(crate) fn draw_x(rng: &mut TaskRng) -> [f64; 3] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// A design with its calibrated participation intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDgp {
    pub spec: DgpSpec,
    pub selection_intercept: f64,
}

impl CalibratedDgp {
    pub fn selection_probability(&self, x: &[f64; 3]) -> f64 {
        expit(self.selection_intercept + self.spec.selection_slope(x))
    }

    /// Mean outcome under treatment `a`.
    pub fn outcome_mean(&self, x: &[f64; 3], a: u8) -> f64 {
        let eta = self.spec.outcome.baseline.eval(x) + f64::from(a) * self.spec.outcome.effect.eval(x);
        match self.spec.outcome_kind {
            OutcomeKind::Continuous => eta,
            OutcomeKind::Binary => expit(eta),
        }
    }

    /// Draws one cohort. Every unit consumes the same number of random draws,
    /// so unit `i` depends only on `(seed, i)`.
    pub fn generate_cohort(&self, seed: u64) -> Result<Cohort> {
        let spec = &self.spec;
        let n = spec.n;
        let mut rng = task_rng(seed, &[stream::COHORT]);
        let mut xs = Vec::with_capacity(n);
        let mut uniforms = Vec::with_capacity(n);
        let mut arms = Vec::with_capacity(n);
        let mut outcome_draws = Vec::with_capacity(n);
        for _ in 0..n {
            xs.push(draw_x(&mut rng));
            uniforms.push(rng.random::<f64>());
            arms.push(u8::from(rng.random::<f64>() < spec.treatment_probability));
            outcome_draws.push(match spec.outcome_kind {
                OutcomeKind::Continuous => StandardNormal.sample(&mut rng),
                OutcomeKind::Binary => rng.random::<f64>(),
            });
        }

        let s: Vec<u8> = if spec.exact_trial_size {
            // Efraimidis-Spirakis: keep the largest ln(u) / w with w = exp(beta' x).
            let mut keys: Vec<(f64, usize)> = (0..n)
                .map(|i| (uniforms[i].max(f64::MIN_POSITIVE).ln() / self.selection_weight(&xs[i]), i))
                .collect();
            keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut s = vec![0u8; n];
            keys.iter().take(spec.n_s1_target).for_each(|&(_, i)| s[i] = 1);
            s
        } else {
            (0..n).map(|i| u8::from(uniforms[i] < self.selection_probability(&xs[i]))).collect()
        };

        let mut a = vec![None; n];
        let mut y = vec![None; n];
        for i in 0..n {
            if s[i] == 0 {
                continue;
            }
            let mean = self.outcome_mean(&xs[i], arms[i]);
            a[i] = Some(arms[i]);
            y[i] = Some(match spec.outcome_kind {
                OutcomeKind::Continuous => mean + spec.noise_sd * outcome_draws[i],
                OutcomeKind::Binary => f64::from(u8::from(outcome_draws[i] < mean)),
            });
        }
        let covariates = DMatrix::from_fn(n, 3, |i, j| xs[i][j]);
        Cohort::new(covariates, vec!["x1".into(), "x2".into(), "x3".into()], 1, s, a, y, spec.outcome_kind)
    }

    fn selection_weight(&self, x: &[f64; 3]) -> f64 {
        self.spec.selection_slope(x).exp()
    }
}
