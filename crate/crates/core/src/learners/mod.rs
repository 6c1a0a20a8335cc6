//! First-stage regression and classification learners, plus a cross-validated
//! convex stacking ensemble over them.
//!
//! All learners are deterministic given their inputs and seed. Binary targets
//! use the logit link, whose predictions are clamped to
//! `[LINK_EPSILON, 1 - LINK_EPSILON]`.

mod boosting;
mod ensemble;
mod forest;
mod glm;
mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ensemble::{fit_super_learner, solve_simplex, solve_simplex_weights, EnsembleModel, SimplexSolution};
pub use glm::Basis;
pub use tree::Tree;

pub const LINK_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    pub fn for_binary(binary: bool) -> Self {
        if binary {
            Link::Logit
        } else {
            Link::Identity
        }
    }

    /// Maps a linear predictor to the response scale.
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => clamp_probability(expit(eta)),
        }
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(LINK_EPSILON, 1.0 - LINK_EPSILON)
}

/// A learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "StrictSpec")]
pub enum LearnerSpec {
    /// Intercept-only GLM (the marginal mean).
    InterceptOnly,
    GlmMainEffects,
    /// Main effects plus all pairwise products.
    GlmPairwiseInteractions,
    /// Ridge-penalized GLM on standardized main effects, squares and pairwise
    /// products.
    RidgePoly2 {
        #[serde(default = "default_ridge_lambda")]
        lambda: f64,
    },
    /// Gradient boosting with shallow regression trees (depth 1 = stumps).
    BoostedStumps {
        rounds: usize,
        learning_rate: f64,
        max_depth: usize,
    },
    RandomForest {
        trees: usize,
        min_leaf: usize,
        #[serde(default)]
        mtry: Option<usize>,
    },
}

fn default_ridge_lambda() -> f64 {
    1.0
}

/// Parsing form of [`LearnerSpec`] whose variants all reject unknown keys.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum StrictSpec {
    InterceptOnly {},
    GlmMainEffects {},
    GlmPairwiseInteractions {},
    RidgePoly2 {
        #[serde(default = "default_ridge_lambda")]
        lambda: f64,
    },
    BoostedStumps {
        rounds: usize,
        learning_rate: f64,
        max_depth: usize,
    },
    RandomForest {
        trees: usize,
        min_leaf: usize,
        #[serde(default)]
        mtry: Option<usize>,
    },
}

impl From<StrictSpec> for LearnerSpec {
    fn from(spec: StrictSpec) -> Self {
        match spec {
            StrictSpec::InterceptOnly {} => LearnerSpec::InterceptOnly,
            StrictSpec::GlmMainEffects {} => LearnerSpec::GlmMainEffects,
            StrictSpec::GlmPairwiseInteractions {} => LearnerSpec::GlmPairwiseInteractions,
            StrictSpec::RidgePoly2 { lambda } => LearnerSpec::RidgePoly2 { lambda },
            StrictSpec::BoostedStumps { rounds, learning_rate, max_depth } => {
                LearnerSpec::BoostedStumps { rounds, learning_rate, max_depth }
            }
            StrictSpec::RandomForest { trees, min_leaf, mtry } => LearnerSpec::RandomForest { trees, min_leaf, mtry },
        }
    }
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::InterceptOnly => "intercept_only",
            LearnerSpec::GlmMainEffects => "glm_main_effects",
            LearnerSpec::GlmPairwiseInteractions => "glm_pairwise_interactions",
            LearnerSpec::RidgePoly2 { .. } => "ridge_poly2",
            LearnerSpec::BoostedStumps { .. } => "boosted_stumps",
            LearnerSpec::RandomForest { .. } => "random_forest",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("learner.{}", self.name()), m.to_string()));
        match *self {
            LearnerSpec::RidgePoly2 { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                bad("lambda must be a finite value >= 0")
            }
            LearnerSpec::BoostedStumps { rounds, learning_rate, max_depth } => {
                if rounds == 0 {
                    bad("rounds must be >= 1")
                } else if !(learning_rate > 0.0 && learning_rate <= 1.0) {
                    bad("learning_rate must be in (0, 1]")
                } else if max_depth == 0 {
                    bad("max_depth must be >= 1")
                } else {
                    Ok(())
                }
            }
            LearnerSpec::RandomForest { trees, min_leaf, mtry } => {
                if trees == 0 {
                    bad("trees must be >= 1")
                } else if min_leaf == 0 {
                    bad("min_leaf must be >= 1")
                } else if mtry == Some(0) {
                    bad("mtry must be >= 1")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Seed stream label that depends on the spec's contents, not its
    /// position in a library.
    pub(crate) fn content_label(&self) -> u64 {
        let text = serde_json::to_string(self).expect("learner specs serialize");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

/// The default five-learner library.
pub fn default_library() -> Vec<LearnerSpec> {
    vec![
        LearnerSpec::GlmMainEffects,
        LearnerSpec::GlmPairwiseInteractions,
        LearnerSpec::RidgePoly2 { lambda: 1.0 },
        LearnerSpec::BoostedStumps { rounds: 200, learning_rate: 0.1, max_depth: 2 },
        LearnerSpec::RandomForest { trees: 200, min_leaf: 5, mtry: None },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ModelParams {
    Constant {
        value: f64,
    },
    Linear {
        basis: Basis,
        /// Per-feature centering and scaling applied before expansion.
        center: Vec<f64>,
        scale: Vec<f64>,
        /// Intercept first, then one coefficient per basis column.
        coefficients: Vec<f64>,
    },
    Boosted {
        base_score: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
    Forest {
        trees: Vec<Tree>,
    },
}

/// A fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub link: Link,
    pub feature_dim: usize,
    pub params: ModelParams,
    /// Set when the normal equations were singular and a ridge jitter was used.
    #[serde(default)]
    pub jittered: bool,
}

impl FittedModel {
    pub fn constant(spec: LearnerSpec, link: Link, feature_dim: usize, value: f64) -> Self {
        let value = match link {
            Link::Identity => value,
            Link::Logit => clamp_probability(value),
        };
        FittedModel { spec, link, feature_dim, params: ModelParams::Constant { value }, jittered: false }
    }

    fn predict_row(&self, row: &[f64], scratch: &mut Vec<f64>) -> f64 {
        match &self.params {
            ModelParams::Constant { value } => *value,
            ModelParams::Linear { basis, center, scale, coefficients } => {
                scratch.clear();
                scratch.extend(row.iter().zip(center.iter().zip(scale)).map(|(x, (c, s))| (x - c) / s));
                let eta = coefficients[0] + basis.dot(scratch, &coefficients[1..]);
                self.link.inverse(eta)
            }
            ModelParams::Boosted { base_score, learning_rate, trees } => {
                let eta = trees.iter().fold(*base_score, |acc, t| acc + learning_rate * t.predict(row));
                self.link.inverse(eta)
            }
            ModelParams::Forest { trees } => {
                let mean = trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64;
                match self.link {
                    Link::Identity => mean,
                    Link::Logit => clamp_probability(mean),
                }
            }
        }
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_dim(features, self.feature_dim)?;
        let mut row = vec![0.0; self.feature_dim];
        let mut scratch = Vec::with_capacity(self.feature_dim);
        Ok((0..features.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = features[(i, j)];
                }
                self.predict_row(&row, &mut scratch)
            })
            .collect())
    }
}

fn check_dim(features: &DMatrix<f64>, expected: usize) -> Result<()> {
    if features.ncols() != expected {
        return Err(Error::Input(format!(
            "feature dimension mismatch: model expects {expected}, got {}",
            features.ncols()
        )));
    }
    Ok(())
}

/// Anything that maps a feature matrix to one prediction per row.
pub trait Predictor {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>>;
}

impl Predictor for FittedModel {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        FittedModel::predict(self, features)
    }
}

impl Predictor for EnsembleModel {
    fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        EnsembleModel::predict(self, features)
    }
}

/// Fits one learner. `targets` must be in `{0, 1}` under the logit link.
pub fn fit_learner(
    features: &DMatrix<f64>,
    targets: &[f64],
    spec: &LearnerSpec,
    link: Link,
    seed: u64,
) -> Result<FittedModel> {
    spec.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::Input(format!("{} targets for {} feature rows", targets.len(), n)));
    }
    if n == 0 {
        return Err(Error::Input("cannot fit a learner on zero rows".into()));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("non-finite feature value".into()));
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::Input("non-finite target value".into()));
    }
    if link == Link::Logit && targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Input("logit-link targets must be 0 or 1".into()));
    }
    match spec {
        LearnerSpec::InterceptOnly => glm::fit(features, targets, spec, Basis::None, 0.0, link),
        LearnerSpec::GlmMainEffects => glm::fit(features, targets, spec, Basis::Main, 0.0, link),
        LearnerSpec::GlmPairwiseInteractions => glm::fit(features, targets, spec, Basis::Pairwise, 0.0, link),
        LearnerSpec::RidgePoly2 { lambda } => glm::fit(features, targets, spec, Basis::Poly2, *lambda, link),
        LearnerSpec::BoostedStumps { rounds, learning_rate, max_depth } => {
            boosting::fit(features, targets, spec, *rounds, *learning_rate, *max_depth, link)
        }
        LearnerSpec::RandomForest { trees, min_leaf, mtry } => {
            forest::fit(features, targets, spec, *trees, *min_leaf, *mtry, link, seed)
        }
    }
}
