//! Cross-fitted nuisance estimation and pseudo-outcome construction.
//!
//! For fold `l`, the participation model is trained on every unit outside
//! `l`; the treatment and arm-specific outcome models are trained on the trial
//! participants outside `l`. Each unit's nuisance values come from the models
//! that never saw its fold. The pseudo-outcome
//!
//! ```text
//! xi = alpha(Z) * (Y - gamma(A, X)) + gamma(1, X) - gamma(0, X)
//! alpha(Z) = S (2A - 1) / (p(S = 1 | X) * p(A | X, S = 1))
//! ```
//!
//! has conditional mean `theta(V)` given the effect modifier.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Cohort, OutcomeKind};
use crate::error::{Error, Result};
use crate::learners::{default_library, fit_learner, fit_super_learner, EnsembleModel, FittedModel, LearnerSpec, Link};
use crate::parallel::{map_range, try_map_range};
use crate::rng::{derive_seed, row_key, stream, task_rng};

/// Attempts at drawing a cohort partition that satisfies the fold constraints.
pub const MAX_PARTITION_ATTEMPTS: u64 = 100;

/// Assignment of `n` units to `folds` disjoint folds (labels `0..folds`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(fold_of: Vec<usize>, folds: usize) -> Result<Self> {
        if folds < 2 {
            return Err(Error::Input(format!("need at least 2 folds, got {folds}")));
        }
        if let Some(bad) = fold_of.iter().find(|&&f| f >= folds) {
            return Err(Error::Input(format!("fold label {bad} out of range for {folds} folds")));
        }
        Ok(FoldAssignment { folds, fold_of })
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        self.fold_of.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Units outside `fold` (the training set `I_{-l}`).
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

fn check_fold_count(n: usize, folds: usize) -> Result<()> {
    if folds < 2 || folds > n {
        return Err(Error::Input(format!("fold count must satisfy 2 <= L <= n (L = {folds}, n = {n})")));
    }
    Ok(())
}

/// Uniformly random balanced partition of `0..n` into `folds` folds.
pub fn partition_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    check_fold_count(n, folds)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut task_rng(seed, &[stream::FOLDS]));
    let mut fold_of = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    FoldAssignment::new(fold_of, folds)
}

/// Hash of one unit's full record; stable under row permutation.
fn unit_key(cohort: &Cohort, i: usize, seed: u64) -> u64 {
    let record = cohort.row(i).into_iter().chain([
        cohort.s()[i] as f64,
        cohort.a()[i].map_or(-1.0, f64::from),
        cohort.y()[i].unwrap_or(f64::NAN),
    ]);
    row_key(seed, record)
}

/// Balanced partition of a cohort whose labels follow the rows' contents, so a
/// row permutation permutes the fold labels with it. With `stratify`, trial
/// participants and non-participants are each spread evenly over the folds.
/// Partitions violating the fold constraints are redrawn up to
/// [`MAX_PARTITION_ATTEMPTS`] times.
pub fn partition_cohort(cohort: &Cohort, folds: usize, seed: u64, stratify: bool) -> Result<FoldAssignment> {
    let n = cohort.n();
    check_fold_count(n, folds)?;
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let attempt_seed = derive_seed(seed, &[stream::FOLDS, attempt]);
        let mut keyed: Vec<(u8, u64, usize)> = (0..n)
            .map(|i| (if stratify { 1 - cohort.s()[i] } else { 0 }, unit_key(cohort, i, attempt_seed), i))
            .collect();
        keyed.sort_unstable();
        let mut fold_of = vec![0; n];
        for (rank, &(_, _, i)) in keyed.iter().enumerate() {
            fold_of[i] = rank % folds;
        }
        let assignment = FoldAssignment::new(fold_of, folds)?;
        if check_partition(cohort, &assignment).is_ok() {
            if attempt > 0 {
                log::info!("fold partition accepted after {} redraws", attempt);
            }
            return Ok(assignment);
        }
    }
    Err(Error::Fit(format!(
        "no valid {folds}-fold partition in {MAX_PARTITION_ATTEMPTS} attempts: every fold needs a trial participant and both arms outside it"
    )))
}

/// Every fold holds a trial participant, and the trial participants outside
/// each fold include both arms.
pub fn check_partition(cohort: &Cohort, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != cohort.n() {
        return Err(Error::Input(format!("fold assignment covers {} units, cohort has {}", folds.n(), cohort.n())));
    }
    let mut in_fold = vec![0usize; folds.folds()];
    let mut arms_out = vec![[0usize; 2]; folds.folds()];
    let (treated, control) = cohort.arm_counts();
    for i in 0..cohort.n() {
        if cohort.s()[i] == 1 {
            let l = folds.fold_of()[i];
            in_fold[l] += 1;
            arms_out[l][cohort.a()[i].unwrap_or(0) as usize] += 1;
        }
    }
    for l in 0..folds.folds() {
        if in_fold[l] == 0 {
            return Err(Error::Fit(format!("fold {l} contains no trial participant")));
        }
        let (t_out, c_out) = (treated - arms_out[l][1], control - arms_out[l][0]);
        if t_out == 0 || c_out == 0 {
            return Err(Error::Fit(format!(
                "training set for fold {l} lacks a treatment arm (treated = {t_out}, control = {c_out})"
            )));
        }
    }
    Ok(())
}

/// How `p(A = 1 | X, S = 1)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreatmentProbability {
    /// Known by design (e.g. 1:1 randomization).
    Known(f64),
    /// Logistic regression on main effects.
    Fit(FitKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKeyword {
    Fit,
}

impl TreatmentProbability {
    pub const FIT: TreatmentProbability = TreatmentProbability::Fit(FitKeyword::Fit);
}

/// How `p(S = 1 | X)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionModel {
    /// Super learner on all units of the training folds.
    Fit,
    /// Every unit treated as a participant (`p = 1`); for analyses restricted
    /// to trial data.
    AllParticipants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    #[serde(default = "default_library")]
    pub library: Vec<LearnerSpec>,
    /// Cross-fitting folds `L`.
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Folds used inside each super learner.
    #[serde(default = "default_folds")]
    pub super_learner_folds: usize,
    #[serde(default = "default_clip")]
    pub clip_epsilon: f64,
    #[serde(default = "default_treatment")]
    pub treatment_probability: TreatmentProbability,
    #[serde(default = "default_selection")]
    pub selection: SelectionModel,
    #[serde(default)]
    pub stratify_folds: bool,
}

fn default_folds() -> usize {
    5
}
fn default_clip() -> f64 {
    0.01
}
fn default_treatment() -> TreatmentProbability {
    TreatmentProbability::FIT
}
fn default_selection() -> SelectionModel {
    SelectionModel::Fit
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            library: default_library(),
            folds: default_folds(),
            super_learner_folds: default_folds(),
            clip_epsilon: default_clip(),
            treatment_probability: default_treatment(),
            selection: default_selection(),
            stratify_folds: false,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.library.is_empty() {
            return Err(Error::config("nuisance.library", "at least one learner is required"));
        }
        for spec in &self.library {
            spec.validate()?;
        }
        if self.folds < 2 {
            return Err(Error::config("nuisance.folds", format!("must be >= 2, got {}", self.folds)));
        }
        if self.super_learner_folds < 2 {
            return Err(Error::config("nuisance.super_learner_folds", format!("must be >= 2, got {}", self.super_learner_folds)));
        }
        if !(self.clip_epsilon >= 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::config("nuisance.clip_epsilon", "must lie in [0, 0.5)"));
        }
        if let TreatmentProbability::Known(p) = self.treatment_probability {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config("nuisance.treatment_probability", "known probability must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentFit {
    Known { probability: f64 },
    Logistic { model: FittedModel },
}

/// Models trained without one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModels {
    pub fold: usize,
    /// SHA-256 over the records of the training rows, in content order.
    pub training_digest: String,
    pub training_rows: usize,
    pub selection: Option<EnsembleModel>,
    pub treatment: TreatmentFit,
    pub outcome_treated: EnsembleModel,
    pub outcome_control: EnsembleModel,
}

/// Per-unit nuisance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisancePredictions {
    /// `p(S = 1 | X)`.
    pub selection: Vec<f64>,
    /// `p(A = 1 | X, S = 1)`.
    pub treatment: Vec<f64>,
    /// `gamma(1, X)`.
    pub outcome_treated: Vec<f64>,
    /// `gamma(0, X)`.
    pub outcome_control: Vec<f64>,
}

impl NuisancePredictions {
    pub fn unit(&self, i: usize) -> UnitNuisance {
        UnitNuisance {
            p_s: self.selection[i],
            p_a1: self.treatment[i],
            gamma1: self.outcome_treated[i],
            gamma0: self.outcome_control[i],
        }
    }

    fn len(&self) -> usize {
        self.selection.len()
    }
}

/// Cross-fitted nuisance models and their out-of-fold predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFits {
    clip_epsilon: f64,
    folds: FoldAssignment,
    models: Vec<FoldModels>,
    raw: NuisancePredictions,
    clipped: NuisancePredictions,
}

impl NuisanceFits {
    pub fn clip_epsilon(&self) -> f64 {
        self.clip_epsilon
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn models(&self) -> &[FoldModels] {
        &self.models
    }

    /// Out-of-fold predictions before probability clipping.
    pub fn raw(&self) -> &NuisancePredictions {
        &self.raw
    }

    /// Out-of-fold predictions with probabilities clipped to `[eps, 1 - eps]`.
    pub fn clipped(&self) -> &NuisancePredictions {
        &self.clipped
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn training_digest(cohort: &Cohort, rows: &[usize]) -> String {
    let mut hasher = Sha256::new();
    for &i in rows {
        for x in cohort.row(i) {
            hasher.update(x.to_le_bytes());
        }
        hasher.update([cohort.s()[i], cohort.a()[i].map_or(2, |a| a)]);
        hasher.update(cohort.y()[i].unwrap_or(f64::NAN).to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn outcome_link(cohort: &Cohort) -> Link {
    Link::for_binary(cohort.outcome_kind() == OutcomeKind::Binary)
}

fn fit_fold(
    cohort: &Cohort,
    config: &NuisanceConfig,
    training: &[usize],
    fold: usize,
    seed: u64,
) -> Result<FoldModels> {
    let x = cohort.covariates();
    let fold_seed = |part: u64| derive_seed(seed, &[stream::NUISANCE, fold as u64, part]);
    let context = |e: Error| match e {
        Error::Fit(m) => Error::Fit(format!("fold {fold}: {m}")),
        Error::Input(m) => Error::Fit(format!("fold {fold}: {m}")),
        other => other,
    };

    let selection = match config.selection {
        SelectionModel::AllParticipants => None,
        SelectionModel::Fit => {
            let targets: Vec<f64> = training.iter().map(|&i| f64::from(cohort.s()[i])).collect();
            Some(
                fit_super_learner(&x.select_rows(training), &targets, &config.library, Link::Logit, config.super_learner_folds, fold_seed(0))
                    .map_err(context)?,
            )
        }
    };

    let trial: Vec<usize> = training.iter().copied().filter(|&i| cohort.s()[i] == 1).collect();
    let arm = |a: u8| -> Vec<usize> { trial.iter().copied().filter(|&i| cohort.a()[i] == Some(a)).collect() };
    let (treated, control) = (arm(1), arm(0));
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Fit(format!(
            "fold {fold}: training set lacks a treatment arm (treated = {}, control = {})",
            treated.len(),
            control.len()
        )));
    }

    let treatment = match config.treatment_probability {
        TreatmentProbability::Known(probability) => TreatmentFit::Known { probability },
        TreatmentProbability::Fit(_) => {
            let targets: Vec<f64> = trial.iter().map(|&i| f64::from(cohort.a()[i].unwrap_or(0))).collect();
            let model = fit_learner(&x.select_rows(&trial), &targets, &LearnerSpec::GlmMainEffects, Link::Logit, fold_seed(1))
                .map_err(context)?;
            TreatmentFit::Logistic { model }
        }
    };

    let link = outcome_link(cohort);
    let outcome_fit = |rows: &[usize], part: u64| -> Result<EnsembleModel> {
        let targets: Vec<f64> = rows.iter().map(|&i| cohort.y()[i].unwrap_or(f64::NAN)).collect();
        fit_super_learner(&x.select_rows(rows), &targets, &config.library, link, config.super_learner_folds, fold_seed(part))
            .map_err(context)
    };
    let outcome_treated = outcome_fit(&treated, 2)?;
    let outcome_control = outcome_fit(&control, 3)?;

    Ok(FoldModels {
        fold,
        training_digest: training_digest(cohort, training),
        training_rows: training.len(),
        selection,
        treatment,
        outcome_treated,
        outcome_control,
    })
}

fn clip(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Fits the nuisance models for every fold and collects out-of-fold
/// predictions. Training rows are ordered by content, so the fits do not
/// depend on the cohort's row order.
pub fn fit_nuisances(cohort: &Cohort, folds: &FoldAssignment, config: &NuisanceConfig, seed: u64) -> Result<NuisanceFits> {
    config.validate()?;
    check_partition(cohort, folds)?;
    let n = cohort.n();
    let order_seed = derive_seed(seed, &[stream::NUISANCE]);
    let keys: Vec<u64> = (0..n).map(|i| unit_key(cohort, i, order_seed)).collect();

    let models = try_map_range(folds.folds(), |l| {
        let mut training = folds.complement(l);
        training.sort_by_key(|&i| (keys[i], i));
        fit_fold(cohort, config, &training, l, seed)
    })?;

    let per_fold: Vec<Result<(Vec<usize>, [Vec<f64>; 4])>> = map_range(folds.folds(), |l| {
        let members = folds.members(l);
        let x: DMatrix<f64> = cohort.covariates().select_rows(&members);
        let m = &models[l];
        let selection = match &m.selection {
            Some(model) => model.predict(&x)?,
            None => vec![1.0; members.len()],
        };
        let treatment = match &m.treatment {
            TreatmentFit::Known { probability } => vec![*probability; members.len()],
            TreatmentFit::Logistic { model } => model.predict(&x)?,
        };
        Ok((members, [selection, treatment, m.outcome_treated.predict(&x)?, m.outcome_control.predict(&x)?]))
    });

    let mut raw = NuisancePredictions {
        selection: vec![0.0; n],
        treatment: vec![0.0; n],
        outcome_treated: vec![0.0; n],
        outcome_control: vec![0.0; n],
    };
    for result in per_fold {
        let (members, [sel, trt, g1, g0]) = result?;
        for (k, &i) in members.iter().enumerate() {
            raw.selection[i] = sel[k];
            raw.treatment[i] = trt[k];
            raw.outcome_treated[i] = g1[k];
            raw.outcome_control[i] = g0[k];
        }
    }
    let eps = config.clip_epsilon;
    let clipped = NuisancePredictions {
        selection: match config.selection {
            SelectionModel::Fit => raw.selection.iter().map(|&p| clip(p, eps)).collect(),
            SelectionModel::AllParticipants => raw.selection.clone(),
        },
        treatment: raw.treatment.iter().map(|&p| clip(p, eps)).collect(),
        outcome_treated: raw.outcome_treated.clone(),
        outcome_control: raw.outcome_control.clone(),
    };
    let below = raw.selection.iter().filter(|&&p| p < eps).count();
    if below > 0 {
        log::warn!("{below} units have fitted participation probability below {eps}; clipped");
    }
    Ok(NuisanceFits { clip_epsilon: eps, folds: folds.clone(), models, raw, clipped })
}

/// Partitions the cohort and fits the nuisance models.
pub fn cross_fit(cohort: &Cohort, config: &NuisanceConfig, seed: u64) -> Result<NuisanceFits> {
    config.validate()?;
    let folds = partition_cohort(cohort, config.folds, seed, config.stratify_folds)?;
    fit_nuisances(cohort, &folds, config, seed)
}

/// Nuisance values for one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitNuisance {
    pub p_s: f64,
    pub p_a1: f64,
    pub gamma1: f64,
    pub gamma0: f64,
}

/// `S (2A - 1) / (p_s * p(received arm))`; zero for non-participants.
pub fn riesz_representer(s: u8, a: u8, p_s: f64, p_a1: f64) -> Result<f64> {
    if s == 0 {
        return Ok(0.0);
    }
    if !(p_s > 0.0 && p_s <= 1.0) || !(p_a1 > 0.0 && p_a1 < 1.0) {
        return Err(Error::Input(format!("probabilities out of range (p_s = {p_s}, p_a1 = {p_a1})")));
    }
    match a {
        1 => Ok(1.0 / (p_s * p_a1)),
        0 => Ok(-1.0 / (p_s * (1.0 - p_a1))),
        other => Err(Error::Input(format!("treatment {other} not in {{0,1}}"))),
    }
}

fn observed(s: u8, a: Option<u8>, y: Option<f64>) -> Result<Option<(u8, f64)>> {
    match (s, a, y) {
        (0, _, _) => Ok(None),
        (1, Some(a), Some(y)) => Ok(Some((a, y))),
        _ => Err(Error::Data { row: 0, message: "trial participant without treatment or outcome".into() }),
    }
}

/// CATE pseudo-outcome for one unit.
pub fn pseudo_outcome_cate(s: u8, a: Option<u8>, y: Option<f64>, nu: &UnitNuisance) -> Result<f64> {
    let contrast = nu.gamma1 - nu.gamma0;
    match observed(s, a, y)? {
        None => Ok(contrast),
        Some((a, y)) => {
            let fitted = if a == 1 { nu.gamma1 } else { nu.gamma0 };
            Ok(riesz_representer(s, a, nu.p_s, nu.p_a1)? * (y - fitted) + contrast)
        }
    }
}

/// Pseudo-outcome for the arm-specific mean `psi(arm; V)`.
pub fn pseudo_outcome_arm(s: u8, a: Option<u8>, y: Option<f64>, nu: &UnitNuisance, arm: u8) -> Result<f64> {
    let (gamma, p_arm) = match arm {
        1 => (nu.gamma1, nu.p_a1),
        0 => (nu.gamma0, 1.0 - nu.p_a1),
        other => return Err(Error::Input(format!("arm {other} not in {{0,1}}"))),
    };
    match observed(s, a, y)? {
        Some((a, y)) if a == arm => {
            if !(nu.p_s > 0.0 && nu.p_s <= 1.0) || !(p_arm > 0.0 && p_arm <= 1.0) {
                return Err(Error::Input(format!("probabilities out of range (p_s = {}, p_a = {p_arm})", nu.p_s)));
            }
            Ok((y - gamma) / (nu.p_s * p_arm) + gamma)
        }
        _ => Ok(gamma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoTarget {
    Cate,
    ArmA1,
    ArmA0,
}

/// Pseudo-outcomes paired with effect-modifier values, one per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub xi: Vec<f64>,
    pub v: Vec<f64>,
    pub target: PseudoTarget,
}

impl PseudoOutcomes {
    pub fn new(v: Vec<f64>, xi: Vec<f64>, target: PseudoTarget) -> Result<Self> {
        if v.len() != xi.len() {
            return Err(Error::Input("v and xi lengths differ".into()));
        }
        if let Some(i) = (0..v.len()).find(|&i| !v[i].is_finite() || !xi[i].is_finite()) {
            return Err(Error::Data { row: i + 1, message: "non-finite pseudo-outcome".into() });
        }
        Ok(PseudoOutcomes { xi, v, target })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Two-column CSV `v,xi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["v", "xi"])?;
        for (v, xi) in self.v.iter().zip(&self.xi) {
            w.write_record([v.to_string(), xi.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pseudo-outcomes from per-unit nuisance values (already out-of-fold).
pub fn pseudo_outcomes_from_predictions(
    cohort: &Cohort,
    nuisance: &NuisancePredictions,
    target: PseudoTarget,
) -> Result<PseudoOutcomes> {
    if nuisance.len() != cohort.n() {
        return Err(Error::Input("one nuisance value per unit required".into()));
    }
    let xi = try_map_range(cohort.n(), |i| {
        let (s, a, y) = (cohort.s()[i], cohort.a()[i], cohort.y()[i]);
        let nu = nuisance.unit(i);
        let value = match target {
            PseudoTarget::Cate => pseudo_outcome_cate(s, a, y, &nu),
            PseudoTarget::ArmA1 => pseudo_outcome_arm(s, a, y, &nu, 1),
            PseudoTarget::ArmA0 => pseudo_outcome_arm(s, a, y, &nu, 0),
        };
        value.map_err(|e| match e {
            Error::Data { message, .. } => Error::Data { row: i + 1, message },
            other => other,
        })
    })?;
    PseudoOutcomes::new(cohort.effect_modifier(), xi, target)
}

/// Pseudo-outcomes using each unit's out-of-fold (clipped) nuisance values.
pub fn build_pseudo_outcomes(cohort: &Cohort, nuisance: &NuisanceFits, target: PseudoTarget) -> Result<PseudoOutcomes> {
    if nuisance.folds.n() != cohort.n() {
        return Err(Error::Input("nuisance fits belong to a different cohort".into()));
    }
    pseudo_outcomes_from_predictions(cohort, &nuisance.clipped, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nu(p_s: f64, p_a1: f64, gamma1: f64, gamma0: f64) -> UnitNuisance {
        UnitNuisance { p_s, p_a1, gamma1, gamma0 }
    }

    #[test]
    fn riesz_examples() {
        assert_eq!(riesz_representer(1, 1, 0.5, 0.5).unwrap(), 4.0);
        assert_eq!(riesz_representer(1, 0, 0.5, 0.5).unwrap(), -4.0);
        assert_eq!(riesz_representer(0, 1, 0.1, 0.9).unwrap(), 0.0);
        assert!(riesz_representer(1, 1, 0.0, 0.5).is_err());
    }

    #[test]
    fn pseudo_outcome_examples() {
        let n = nu(0.25, 0.5, 0.6, 0.4);
        assert!((pseudo_outcome_cate(1, Some(1), Some(1.0), &n).unwrap() - 3.4).abs() < 1e-12);
        assert_eq!(pseudo_outcome_cate(0, None, None, &nu(0.3, 0.5, 2.0, 0.5)).unwrap(), 1.5);
        let exact = pseudo_outcome_cate(1, Some(0), Some(0.4), &n).unwrap();
        assert!((exact - 0.2).abs() < 1e-15);
        assert_eq!(pseudo_outcome_arm(1, Some(1), Some(2.0), &nu(0.5, 0.5, 1.0, 0.0), 1).unwrap(), 5.0);
        assert_eq!(pseudo_outcome_arm(1, Some(0), Some(2.0), &nu(0.5, 0.5, 1.0, 0.0), 1).unwrap(), 1.0);
        assert!(matches!(pseudo_outcome_cate(1, None, Some(1.0), &n), Err(Error::Data { .. })));
    }

    #[test]
    fn partition_balance_and_seed_sensitivity() {
        let f = partition_folds(10, 5, 1).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        let mut sizes = partition_folds(11, 5, 1).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        let a = partition_folds(2500, 5, 1).unwrap();
        let b = partition_folds(2500, 5, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.sizes(), vec![500; 5]);
        assert!(partition_folds(3, 5, 0).is_err());
        assert!(partition_folds(10, 1, 0).is_err());
    }

    #[test]
    fn treatment_probability_json() {
        let known: TreatmentProbability = serde_json::from_str("0.5").unwrap();
        assert_eq!(known, TreatmentProbability::Known(0.5));
        let fit: TreatmentProbability = serde_json::from_str("\"fit\"").unwrap();
        assert_eq!(fit, TreatmentProbability::FIT);
        assert!(serde_json::from_str::<TreatmentProbability>("\"guess\"").is_err());
        assert_eq!(serde_json::to_string(&TreatmentProbability::FIT).unwrap(), "\"fit\"");
    }
}
