//! Generalized linear models fit by (penalized) iteratively reweighted least
//! squares, over main-effect, pairwise-interaction, or full quadratic bases.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{expit, FittedModel, LearnerSpec, Link, ModelParams};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const DEVIANCE_TOLERANCE: f64 = 1e-10;
const SINGULAR_JITTER: f64 = 1e-8;
const MIN_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    None,
    Main,
    /// Main effects and products `x_j x_k`, `j < k`.
    Pairwise,
    /// Main effects, squares, and pairwise products.
    Poly2,
}

impl Basis {
    pub fn width(self, p: usize) -> usize {
        match self {
            Basis::None => 0,
            Basis::Main => p,
            Basis::Pairwise => p + p * (p.saturating_sub(1)) / 2,
            Basis::Poly2 => 2 * p + p * (p.saturating_sub(1)) / 2,
        }
    }

    pub fn expand(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self == Basis::None {
            return;
        }
        out.extend_from_slice(x);
        if self == Basis::Poly2 {
            out.extend(x.iter().map(|v| v * v));
        }
        if matches!(self, Basis::Pairwise | Basis::Poly2) {
            for j in 0..x.len() {
                for k in (j + 1)..x.len() {
                    out.push(x[j] * x[k]);
                }
            }
        }
    }

    pub fn dot(self, x: &[f64], coefficients: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut c = coefficients.iter();
        if self == Basis::None {
            return 0.0;
        }
        for v in x {
            acc += v * c.next().expect("coefficient per basis column");
        }
        if self == Basis::Poly2 {
            for v in x {
                acc += v * v * c.next().expect("coefficient per basis column");
            }
        }
        if matches!(self, Basis::Pairwise | Basis::Poly2) {
            for j in 0..x.len() {
                for k in (j + 1)..x.len() {
                    acc += x[j] * x[k] * c.next().expect("coefficient per basis column");
                }
            }
        }
        acc
    }
}

fn standardization(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut center = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        center.push(mean);
        scale.push(if sd > 1e-12 { sd } else { 1.0 });
    }
    (center, scale)
}

fn design(x: &DMatrix<f64>, basis: Basis, center: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let q = basis.width(p);
    let mut phi = DMatrix::zeros(n, q + 1);
    let mut row = vec![0.0; p];
    let mut expanded = Vec::with_capacity(q);
    for i in 0..n {
        for j in 0..p {
            row[j] = (x[(i, j)] - center[j]) / scale[j];
        }
        basis.expand(&row, &mut expanded);
        phi[(i, 0)] = 1.0;
        for (k, v) in expanded.iter().enumerate() {
            phi[(i, k + 1)] = *v;
        }
    }
    phi
}

/// Solves `(A + lambda * I') beta = r` where `I'` skips the intercept. On a
/// singular system, retries with a small ridge jitter and reports it.
fn solve_penalized(a: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> Result<(DVector<f64>, bool)> {
    let penalized = |extra: f64| {
        let mut m = a.clone();
        for k in 1..m.nrows() {
            m[(k, k)] += lambda + extra;
        }
        m
    };
    if let Some(ch) = Cholesky::new(penalized(0.0)) {
        let beta = ch.solve(r);
        if beta.iter().all(|b| b.is_finite()) {
            return Ok((beta, false));
        }
    }
    match Cholesky::new(penalized(SINGULAR_JITTER)) {
        Some(ch) => Ok((ch.solve(r), true)),
        None => Err(Error::Fit("normal equations are singular even after ridge jitter".into())),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn penalized_deviance(phi: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, lambda: f64) -> f64 {
    let eta = phi * beta;
    let loglik: f64 = eta.iter().zip(y).map(|(e, yi)| yi * e - softplus(*e)).sum();
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    -2.0 * loglik + lambda * penalty
}

pub(super) fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &LearnerSpec,
    basis: Basis,
    lambda: f64,
    link: Link,
) -> Result<FittedModel> {
    let (center, scale) = standardization(x);
    let phi = design(x, basis, &center, &scale);
    let yv = DVector::from_column_slice(y);
    let n = y.len() as f64;

    let (beta, jittered) = match link {
        Link::Identity => {
            let a = phi.transpose() * &phi;
            let r = phi.transpose() * &yv;
            solve_penalized(&a, &r, lambda)?
        }
        Link::Logit => {
            let mean = (y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
            let mut beta = DVector::zeros(phi.ncols());
            beta[0] = super::logit(mean);
            let mut deviance = penalized_deviance(&phi, y, &beta, lambda);
            let mut jittered = false;
            for _ in 0..MAX_ITERATIONS {
                let eta = &phi * &beta;
                let mut weighted = phi.clone();
                let mut wz = DVector::zeros(y.len());
                for i in 0..y.len() {
                    let mu = expit(eta[i]);
                    let w = (mu * (1.0 - mu)).max(MIN_WEIGHT);
                    let z = eta[i] + (y[i] - mu) / w;
                    wz[i] = w * z;
                    weighted.row_mut(i).scale_mut(w);
                }
                let a = phi.transpose() * &weighted;
                let r = phi.transpose() * &wz;
                let (mut candidate, jit) = solve_penalized(&a, &r, lambda)?;
                jittered |= jit;
                let mut candidate_dev = penalized_deviance(&phi, y, &candidate, lambda);
                let mut halvings = 0;
                while !(candidate_dev <= deviance + 1e-12 * deviance.abs()) && halvings < 30 {
                    candidate = (&candidate + &beta) * 0.5;
                    candidate_dev = penalized_deviance(&phi, y, &candidate, lambda);
                    halvings += 1;
                }
                let change = (candidate_dev - deviance).abs();
                beta = candidate;
                deviance = candidate_dev;
                if change < DEVIANCE_TOLERANCE * (deviance.abs() + 0.1) {
                    break;
                }
            }
            (beta, jittered)
        }
    };
    if jittered {
        log::warn!("{}: singular normal equations, applied ridge jitter {SINGULAR_JITTER}", spec.name());
    }
    Ok(FittedModel {
        spec: spec.clone(),
        link,
        feature_dim: x.ncols(),
        params: ModelParams::Linear { basis, center, scale, coefficients: beta.iter().copied().collect() },
        jittered,
    })
}
