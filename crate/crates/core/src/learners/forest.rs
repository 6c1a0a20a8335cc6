//! Random forest of bootstrapped least-squares trees.

use nalgebra::DMatrix;
use rand::Rng;

use super::tree::{grow, TreeParams};
use super::{FittedModel, LearnerSpec, Link, ModelParams};
use crate::error::Result;
use crate::parallel::map_range;
use crate::rng::{stream, task_rng};

#[allow(clippy::too_many_arguments)]
pub(super) fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &LearnerSpec,
    n_trees: usize,
    min_leaf: usize,
    mtry: Option<usize>,
    link: Link,
    seed: u64,
) -> Result<FittedModel> {
    let n = y.len();
    let p = x.ncols();
    let mtry = mtry.unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1)).min(p);
    let params = TreeParams { max_depth: usize::MAX, min_leaf, lambda: 0.0, mtry: Some(mtry) };
    let ones = vec![1.0; n];
    let trees = map_range(n_trees, |t| {
        let mut rng = task_rng(seed, &[stream::LEARNER, t as u64]);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let g: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        grow(x, &rows, &g, &ones, params, Some(&mut rng))
    });
    Ok(FittedModel {
        spec: spec.clone(),
        link,
        feature_dim: p,
        params: ModelParams::Forest { trees },
        jittered: false,
    })
}
