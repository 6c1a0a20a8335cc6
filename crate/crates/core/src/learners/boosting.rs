//! Gradient boosting with shallow regression trees. Squared loss under the
//! identity link; logistic loss with Newton leaf values under the logit link.

use nalgebra::DMatrix;

use super::tree::{grow, TreeParams};
use super::{expit, logit, FittedModel, LearnerSpec, Link, ModelParams};
use crate::error::Result;

/// L2 leaf regularization for the logistic loss; keeps Newton steps finite on
/// pure leaves.
const LOGISTIC_LEAF_LAMBDA: f64 = 1.0;

pub(super) fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &LearnerSpec,
    rounds: usize,
    learning_rate: f64,
    max_depth: usize,
    link: Link,
) -> Result<FittedModel> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match link {
        Link::Identity => mean,
        Link::Logit => logit(mean.clamp(1e-6, 1.0 - 1e-6)),
    };
    let params = TreeParams {
        max_depth,
        min_leaf: 1,
        lambda: if link == Link::Logit { LOGISTIC_LEAF_LAMBDA } else { 0.0 },
        mtry: None,
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut score = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![1.0; n];
    let mut trees = Vec::with_capacity(rounds);
    let mut row = vec![0.0; x.ncols()];
    for _ in 0..rounds {
        for i in 0..n {
            match link {
                Link::Identity => g[i] = y[i] - score[i],
                Link::Logit => {
                    let p = expit(score[i]);
                    g[i] = y[i] - p;
                    h[i] = (p * (1.0 - p)).max(1e-12);
                }
            }
        }
        let tree = grow(x, &rows, &g, &h, params, None);
        for (i, s) in score.iter_mut().enumerate() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            *s += learning_rate * tree.predict(&row);
        }
        trees.push(tree);
    }
    Ok(FittedModel {
        spec: spec.clone(),
        link,
        feature_dim: x.ncols(),
        params: ModelParams::Boosted { base_score, learning_rate, trees },
        jittered: false,
    })
}
