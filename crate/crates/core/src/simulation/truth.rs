//! True effect curves `theta(v) = E[Y(1) - Y(0) | X2 = v]` for the synthetic
//! designs.
//!
//! The target population has `X ~ N(0, I)`, so conditioning on `X2 = v` leaves
//! `X1, X3` standard normal. Continuous outcomes have a closed form; binary
//! outcomes are integrated by Monte Carlo with common draws across grid
//! points, in fixed-seed shards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::OutcomeKind;
use crate::learners::expit;
use crate::parallel::map_range;
use crate::rng::{stream, task_rng};

use super::dgp::DgpSpec;

pub const TRUTH_SHARD_SIZE: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCurve {
    pub grid: Vec<f64>,
    pub theta: Vec<f64>,
    /// `theta''(v)`, for the smoothing-bias reference.
    pub second_derivative: Vec<f64>,
    /// Monte Carlo size, `None` for closed forms.
    pub mc_size: Option<usize>,
}

/// `theta(v)` on `grid`. `mc_size` and `seed` are used for binary outcomes only.
pub fn true_cate_curve(dgp: &DgpSpec, grid: &[f64], mc_size: usize, seed: u64) -> TruthCurve {
    match dgp.outcome_kind {
        OutcomeKind::Continuous => {
            let e = dgp.outcome.effect;
            TruthCurve {
                grid: grid.to_vec(),
                theta: grid.iter().map(|v| e.intercept + e.x[1] * v + e.x2_squared * v * v).collect(),
                second_derivative: vec![2.0 * e.x2_squared; grid.len()],
                mc_size: None,
            }
        }
        OutcomeKind::Binary => binary_truth(dgp, grid, mc_size, seed),
    }
}

/// `theta(v)` at a single point.
pub fn true_cate(dgp: &DgpSpec, v: f64, mc_size: usize, seed: u64) -> f64 {
    true_cate_curve(dgp, &[v], mc_size, seed).theta[0]
}

fn shard_sizes(total: usize) -> Vec<usize> {
    let full = total / TRUTH_SHARD_SIZE;
    let mut sizes = vec![TRUTH_SHARD_SIZE; full];
    if total % TRUTH_SHARD_SIZE > 0 {
        sizes.push(total % TRUTH_SHARD_SIZE);
    }
    sizes
}

fn binary_truth(dgp: &DgpSpec, grid: &[f64], mc_size: usize, seed: u64) -> TruthCurve {
    let (b, e) = (dgp.outcome.baseline, dgp.outcome.effect);
    let m = grid.len();
    let sizes = shard_sizes(mc_size.max(1));
    let shards = map_range(sizes.len(), |shard| {
        let mut rng = task_rng(seed, &[stream::TRUTH, shard as u64]);
        let mut theta = vec![0.0; m];
        let mut curvature = vec![0.0; m];
        for _ in 0..sizes[shard] {
            let x1: f64 = rng.sample(StandardNormal);
            let x3: f64 = rng.sample(StandardNormal);
            for (k, &v) in grid.iter().enumerate() {
                let x = [x1, v, x3];
                let base = b.eval(&x);
                let mut diff = 0.0;
                let mut second = 0.0;
                for a in [0.0, 1.0] {
                    let p = expit(base + a * e.eval(&x));
                    let slope = b.x[1] + 2.0 * b.x2_squared * v + a * (e.x[1] + 2.0 * e.x2_squared * v);
                    let bend = 2.0 * b.x2_squared + a * 2.0 * e.x2_squared;
                    let dp = p * (1.0 - p);
                    let d2 = dp * (1.0 - 2.0 * p) * slope * slope + dp * bend;
                    let sign = if a == 1.0 { 1.0 } else { -1.0 };
                    diff += sign * p;
                    second += sign * d2;
                }
                theta[k] += diff;
                curvature[k] += second;
            }
        }
        (theta, curvature)
    });
    let total = sizes.iter().sum::<usize>() as f64;
    let mut theta = vec![0.0; m];
    let mut second_derivative = vec![0.0; m];
    for (t, c) in shards {
        for k in 0..m {
            theta[k] += t[k];
            second_derivative[k] += c[k];
        }
    }
    theta.iter_mut().for_each(|t| *t /= total);
    second_derivative.iter_mut().for_each(|c| *c /= total);
    TruthCurve { grid: grid.to_vec(), theta, second_derivative, mc_size: Some(total as usize) }
}

/// Monte Carlo average of simulated individual effects `Y(1) - Y(0)` given
/// `X2 = v`, including outcome noise. A check on the closed-form truth.
pub fn simulated_effect_average(dgp: &DgpSpec, grid: &[f64], mc_size: usize, seed: u64) -> Vec<f64> {
    let (b, e) = (dgp.outcome.baseline, dgp.outcome.effect);
    let sizes = shard_sizes(mc_size.max(1));
    let shards = map_range(sizes.len(), |shard| {
        let mut rng = task_rng(seed, &[stream::TRUTH, u64::MAX, shard as u64]);
        let mut sums = vec![0.0; grid.len()];
        for _ in 0..sizes[shard] {
            let x1: f64 = rng.sample(StandardNormal);
            let x3: f64 = rng.sample(StandardNormal);
            for (k, &v) in grid.iter().enumerate() {
                let x = [x1, v, x3];
                let (eta0, eta1) = (b.eval(&x), b.eval(&x) + e.eval(&x));
                let effect = match dgp.outcome_kind {
                    OutcomeKind::Continuous => {
                        let n1: f64 = rng.sample(StandardNormal);
                        let n0: f64 = rng.sample(StandardNormal);
                        (eta1 + dgp.noise_sd * n1) - (eta0 + dgp.noise_sd * n0)
                    }
                    OutcomeKind::Binary => {
                        let u: f64 = rng.random();
                        f64::from(u8::from(u < expit(eta1))) - f64::from(u8::from(u < expit(eta0)))
                    }
                };
                sums[k] += effect;
            }
        }
        sums
    });
    let total = sizes.iter().sum::<usize>() as f64;
    let mut out = vec![0.0; grid.len()];
    for s in shards {
        for k in 0..grid.len() {
            out[k] += s[k];
        }
    }
    out.iter().map(|s| s / total).collect()
}
