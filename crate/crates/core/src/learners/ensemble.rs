//! Cross-validated convex stacking ("super learner").
//!
//! Each library member is fit on `k - 1` folds and predicts the held-out fold.
//! The weights minimize the squared error of the stacked out-of-fold
//! predictions over the probability simplex (on the probability scale for the
//! logit link). Members are then refit on all rows.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_dim, clamp_probability, fit_learner, FittedModel, LearnerSpec, Link};
use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::rng::{derive_seed, row_key, stream};

const SIMPLEX_TOLERANCE: f64 = 1e-10;
const SIMPLEX_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub library: Vec<LearnerSpec>,
    /// Full-data refits, aligned with `library`; `None` for members that failed.
    pub members: Vec<Option<FittedModel>>,
    /// Simplex weights aligned with `library`.
    pub weights: Vec<f64>,
    /// Cross-validated mean squared error per member.
    pub cv_risk: Vec<Option<f64>>,
    pub link: Link,
    pub feature_dim: usize,
}

impl EnsembleModel {
    /// Assembles an ensemble from already fitted members and fixed weights.
    pub fn from_members(members: Vec<FittedModel>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(Error::Input("need one weight per member".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Input("weights must lie on the probability simplex".into()));
        }
        let link = members[0].link;
        let feature_dim = members[0].feature_dim;
        if members.iter().any(|m| m.link != link || m.feature_dim != feature_dim) {
            return Err(Error::Input("members must share link and feature dimension".into()));
        }
        Ok(EnsembleModel {
            library: members.iter().map(|m| m.spec.clone()).collect(),
            cv_risk: vec![None; members.len()],
            members: members.into_iter().map(Some).collect(),
            weights,
            link,
            feature_dim,
        })
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_dim(features, self.feature_dim)?;
        let mut out = vec![0.0; features.nrows()];
        for (member, &w) in self.members.iter().zip(&self.weights) {
            let Some(member) = member else { continue };
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(member.predict(features)?) {
                *o += w * p;
            }
        }
        if self.link == Link::Logit {
            out.iter_mut().for_each(|p| *p = clamp_probability(*p));
        }
        Ok(out)
    }
}

/// Content-keyed fold labels: a row's fold depends on the seed and its values,
/// not on its position.
pub(crate) fn keyed_folds(features: &DMatrix<f64>, targets: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let n = targets.len();
    let mut keys: Vec<(u64, usize)> = (0..n)
        .map(|i| {
            let row = features.row(i).iter().copied().chain(std::iter::once(targets[i])).collect::<Vec<_>>();
            (row_key(seed, row), i)
        })
        .collect();
    keys.sort_unstable();
    let mut fold = vec![0; n];
    for (rank, &(_, i)) in keys.iter().enumerate() {
        fold[i] = rank % k;
    }
    fold
}

pub fn fit_super_learner(
    features: &DMatrix<f64>,
    targets: &[f64],
    library: &[LearnerSpec],
    link: Link,
    k_folds: usize,
    seed: u64,
) -> Result<EnsembleModel> {
    let n = targets.len();
    if library.is_empty() {
        return Err(Error::Input("empty learner library".into()));
    }
    if k_folds < 2 {
        return Err(Error::Input("super learner needs at least 2 folds".into()));
    }
    if n < 2 * k_folds {
        return Err(Error::Input(format!("super learner with {k_folds} folds needs at least {} rows, got {n}", 2 * k_folds)));
    }
    if features.nrows() != n {
        return Err(Error::Input("feature and target row counts differ".into()));
    }
    for spec in library {
        spec.validate()?;
    }
    let p = features.ncols();

    if targets.iter().all(|&y| y == targets[0]) {
        log::warn!("constant targets ({}); fitting a constant model", targets[0]);
        let k = library.len();
        return Ok(EnsembleModel {
            library: library.to_vec(),
            members: library.iter().map(|s| Some(FittedModel::constant(s.clone(), link, p, targets[0]))).collect(),
            weights: vec![1.0 / k as f64; k],
            cv_risk: vec![Some(0.0); k],
            link,
            feature_dim: p,
        });
    }

    let fold_of = keyed_folds(features, targets, k_folds, derive_seed(seed, &[stream::SUPER_LEARNER]));
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> = (0..k_folds)
        .map(|f| ((0..n).filter(|&i| fold_of[i] != f).collect(), (0..n).filter(|&i| fold_of[i] == f).collect()))
        .collect();
    let member_seed =
        |spec: &LearnerSpec, fold: usize| derive_seed(seed, &[stream::LEARNER, spec.content_label(), fold as u64]);

    let k = library.len();
    let cv_tasks: Vec<Result<Vec<f64>>> = map_range(k_folds * k, |task| {
        let (fold, m) = (task / k, task % k);
        let (train, test) = &fold_rows[fold];
        let xt = features.select_rows(train);
        let yt: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let model = fit_learner(&xt, &yt, &library[m], link, member_seed(&library[m], fold))?;
        model.predict(&features.select_rows(test))
    });

    let mut cv_predictions: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; n]); k];
    for (task, result) in cv_tasks.into_iter().enumerate() {
        let (fold, m) = (task / k, task % k);
        match (result, cv_predictions[m].as_mut()) {
            (Ok(pred), Some(column)) => {
                for (&i, p) in fold_rows[fold].1.iter().zip(pred) {
                    column[i] = p;
                }
            }
            (Err(e), Some(_)) => {
                log::warn!("learner {} failed on fold {fold}: {e}; weight set to 0", library[m].name());
                cv_predictions[m] = None;
            }
            _ => {}
        }
    }

    let refits: Vec<Option<FittedModel>> = map_range(k, |m| {
        cv_predictions[m].as_ref()?;
        match fit_learner(features, targets, &library[m], link, member_seed(&library[m], k_folds)) {
            Ok(model) => Some(model),
            Err(e) => {
                log::warn!("learner {} failed on full data: {e}; weight set to 0", library[m].name());
                None
            }
        }
    });

    let usable: Vec<usize> = (0..k).filter(|&m| refits[m].is_some()).collect();
    if usable.is_empty() {
        return Err(Error::Fit("every learner in the library failed".into()));
    }
    let cv_matrix = DMatrix::from_fn(n, usable.len(), |i, c| cv_predictions[usable[c]].as_ref().unwrap()[i]);
    let solved = solve_simplex_weights(&cv_matrix, targets)?;
    let mut weights = vec![0.0; k];
    for (c, &m) in usable.iter().enumerate() {
        weights[m] = solved[c];
    }
    let cv_risk = cv_predictions
        .iter()
        .map(|col| col.as_ref().map(|c| c.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n as f64))
        .collect();
    Ok(EnsembleModel { library: library.to_vec(), members: refits, weights, cv_risk, link, feature_dim: p })
}

/// Result of the simplex-constrained least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j as f64 + 1.0);
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn objective(p: &DMatrix<f64>, t: &[f64], w: &[f64]) -> f64 {
    let fitted = p * DVector::from_column_slice(w);
    fitted.iter().zip(t).map(|(f, y)| (f - y).powi(2)).sum()
}

/// Exact minimizer on the affine hull of the current support, accepted only
/// when it stays feasible and does not increase the objective.
fn polish(p: &DMatrix<f64>, t: &[f64], gram: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 1e-9).collect();
    let s = support.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            kkt[(a, c)] = 2.0 * gram[(i, j)];
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = 2.0 * b[i];
    }
    rhs[s] = 1.0;
    let scale = kkt.amax().max(1.0);
    let solution = kkt.svd(true, true).solve(&rhs, 1e-13 * scale).ok()?;
    if (0..s).any(|a| !(solution[a] >= -1e-12)) {
        return None;
    }
    let mut polished = vec![0.0; w.len()];
    for (a, &i) in support.iter().enumerate() {
        polished[i] = solution[a].max(0.0);
    }
    let total: f64 = polished.iter().sum();
    polished.iter_mut().for_each(|x| *x /= total);
    (objective(p, t, &polished) <= objective(p, t, w)).then_some(polished)
}

/// Spreads weight equally across bitwise-identical prediction columns.
fn equalize_ties(p: &DMatrix<f64>, w: &mut [f64]) {
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for k in 0..p.ncols() {
        groups.entry(p.column(k).iter().map(|x| x.to_bits()).collect()).or_default().push(k);
    }
    for members in groups.values().filter(|m| m.len() > 1) {
        let share = members.iter().map(|&k| w[k]).sum::<f64>() / members.len() as f64;
        members.iter().for_each(|&k| w[k] = share);
    }
}

/// Detailed form of [`solve_simplex_weights`].
pub fn solve_simplex(cv_predictions: &DMatrix<f64>, targets: &[f64]) -> Result<SimplexSolution> {
    let (n, k) = cv_predictions.shape();
    if k == 0 {
        return Err(Error::Input("no prediction columns".into()));
    }
    if targets.len() != n {
        return Err(Error::Input("one target per prediction row required".into()));
    }
    if cv_predictions.iter().chain(targets).any(|x| !x.is_finite()) {
        return Err(Error::Input("non-finite entries in the stacking problem".into()));
    }
    if k == 1 {
        return Ok(SimplexSolution { weights: vec![1.0], objective: objective(cv_predictions, targets, &[1.0]), iterations: 0 });
    }
    let t = DVector::from_column_slice(targets);
    let gram = cv_predictions.transpose() * cv_predictions;
    let b = cv_predictions.transpose() * &t;
    let lipschitz = 2.0 * SymmetricEigen::new(gram.clone()).eigenvalues.max();

    let mut w = vec![1.0 / k as f64; k];
    let mut iterations = 0;
    if lipschitz > 0.0 {
        let mut z = w.clone();
        let mut momentum = 1.0f64;
        for it in 1..=SIMPLEX_MAX_ITERATIONS {
            iterations = it;
            let grad = (&gram * DVector::from_column_slice(&z) - &b) * 2.0;
            let step: Vec<f64> = z.iter().zip(grad.iter()).map(|(zi, g)| zi - g / lipschitz).collect();
            let next = project_to_simplex(&step);
            let change = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            z = next.iter().zip(&w).map(|(a, b)| a + beta * (a - b)).collect();
            w = next;
            momentum = next_momentum;
            if change < SIMPLEX_TOLERANCE {
                break;
            }
        }
        if let Some(polished) = polish(cv_predictions, targets, &gram, &b, &w) {
            w = polished;
        }
    }
    equalize_ties(cv_predictions, &mut w);
    Ok(SimplexSolution { objective: objective(cv_predictions, targets, &w), weights: w, iterations })
}

/// Weights `w >= 0`, `sum(w) = 1` minimizing `||P w - t||^2`.
pub fn solve_simplex_weights(cv_predictions: &DMatrix<f64>, targets: &[f64]) -> Result<Vec<f64>> {
    Ok(solve_simplex(cv_predictions, targets)?.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn projection_lands_on_simplex() {
        for v in [vec![0.2, 0.3, 0.5], vec![5.0, -1.0, 0.0], vec![-3.0, -3.0], vec![0.9, 0.9, 0.9]] {
            let w = project_to_simplex(&v);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x >= 0.0));
        }
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn single_column_gets_full_weight() {
        let p = DMatrix::from_fn(5, 1, |i, _| i as f64);
        assert_eq!(solve_simplex_weights(&p, &[1.0; 5]).unwrap(), vec![1.0]);
    }

    #[test]
    fn exact_fit_column_dominates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let p = DMatrix::from_fn(100, 2, |i, j| if j == 0 { t[i] } else { rng.random::<f64>() - 0.5 });
        let w = solve_simplex_weights(&p, &t).unwrap();
        assert!(w[0] >= 0.999, "{w:?}");
    }

    #[test]
    fn identical_columns_split_evenly() {
        let p = DMatrix::from_fn(20, 2, |i, _| (i as f64).sin());
        let t: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let w = solve_simplex_weights(&p, &t).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn ensemble_combines_members() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let one = FittedModel::constant(LearnerSpec::InterceptOnly, Link::Identity, 1, 1.0);
        let three = FittedModel::constant(LearnerSpec::GlmMainEffects, Link::Identity, 1, 3.0);
        let half = EnsembleModel::from_members(vec![one.clone(), three.clone()], vec![0.5, 0.5]).unwrap();
        assert_eq!(half.predict(&x).unwrap(), vec![2.0; 4]);
        let vertex = EnsembleModel::from_members(vec![one.clone(), three], vec![1.0, 0.0]).unwrap();
        assert_eq!(vertex.predict(&x).unwrap(), one.predict(&x).unwrap());
        assert!(EnsembleModel::from_members(vec![one], vec![0.7]).is_err());
    }

    #[test]
    fn keyed_folds_are_balanced_and_permutation_equivariant() {
        let x = DMatrix::from_fn(23, 2, |i, j| (i * 3 + j) as f64);
        let y: Vec<f64> = (0..23).map(|i| i as f64 * 0.5).collect();
        let folds = keyed_folds(&x, &y, 5, 9);
        let mut sizes = [0usize; 5];
        folds.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let perm: Vec<usize> = (0..23).rev().collect();
        let xp = x.select_rows(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let folds_p = keyed_folds(&xp, &yp, 5, 9);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(folds_p[new], folds[old]);
        }
    }

    #[test]
    fn failing_library_is_an_error_but_partial_failure_is_not() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64 * 2.0).collect();
        // Non-binary targets under the logit link make every learner fail.
        let err = fit_super_learner(&x, &y, &[LearnerSpec::GlmMainEffects], Link::Logit, 2, 1);
        assert!(matches!(err, Err(Error::Fit(_))));
    }
}
