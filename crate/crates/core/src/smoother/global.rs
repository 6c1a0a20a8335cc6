//! Global polynomial least squares in `V` with heteroskedasticity-robust
//! (HC0) standard errors. Used as the linear and quadratic comparators.

use nalgebra::{DMatrix, DVector};

use super::{CateCurve, PointFlags, WALD_Z};
use crate::error::{Error, Result};

/// Least squares of `xi` on `(1, V, ..., V^degree)`, evaluated on `grid`.
pub fn fit_global_polynomial(v: &[f64], xi: &[f64], degree: usize, grid: &[f64]) -> Result<CateCurve> {
    let n = v.len();
    let q = degree + 1;
    if xi.len() != n {
        return Err(Error::Input("v and xi lengths differ".into()));
    }
    if n < q {
        return Err(Error::Input(format!("degree-{degree} fit needs at least {q} points, got {n}")));
    }
    let basis = |x: f64| DVector::from_fn(q, |k, _| x.powi(k as i32));
    let design = DMatrix::from_fn(n, q, |i, k| v[i].powi(k as i32));
    let gram = design.transpose() * &design;
    let inverse = gram
        .cholesky()
        .ok_or_else(|| Error::Fit(format!("degree-{degree} design is singular")))?
        .inverse();
    let beta = &inverse * (design.transpose() * DVector::from_column_slice(xi));
    let mut meat = DMatrix::zeros(q, q);
    for i in 0..n {
        let g = basis(v[i]);
        let r = xi[i] - g.dot(&beta);
        meat += &g * g.transpose() * (r * r);
    }
    let cov = &inverse * meat * &inverse;

    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let m = grid.len();
    let mut curve = CateCurve {
        grid: grid.to_vec(),
        theta_hat: Vec::with_capacity(m),
        slope_hat: Vec::with_capacity(m),
        se: Vec::with_capacity(m),
        ci_lower: Vec::with_capacity(m),
        ci_upper: Vec::with_capacity(m),
        n_effective: vec![n; m],
        bandwidth: None,
        point_bandwidth: vec![f64::INFINITY; m],
        flags: Vec::with_capacity(m),
        n,
    };
    for &x in grid {
        let g = basis(x);
        let theta = g.dot(&beta);
        let slope: f64 = (1..q).map(|k| k as f64 * beta[k] * x.powi(k as i32 - 1)).sum();
        let se = (g.transpose() * &cov * &g)[(0, 0)].max(0.0).sqrt();
        curve.theta_hat.push(theta);
        curve.slope_hat.push(slope);
        curve.se.push(se);
        curve.ci_lower.push(theta - WALD_Z * se);
        curve.ci_upper.push(theta + WALD_Z * se);
        curve.flags.push(PointFlags { extrapolation: x < lo || x > hi, ..PointFlags::default() });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_and_hc0_matches_hand_formula() {
        let v: Vec<f64> = (0..12).map(|i| i as f64 / 3.0 - 2.0).collect();
        let xi: Vec<f64> = v.iter().map(|x| 1.0 + x - 0.5 * x * x).collect();
        let curve = fit_global_polynomial(&v, &xi, 2, &[0.0, 1.0]).unwrap();
        assert!((curve.theta_hat[0] - 1.0).abs() < 1e-12);
        assert!((curve.theta_hat[1] - 1.5).abs() < 1e-12);
        assert!((curve.slope_hat[1]).abs() < 1e-12);
        assert!(curve.se.iter().all(|s| *s < 1e-6));

        // Intercept-only analogue via degree 0: HC0 se = sqrt(sum r^2) / n.
        let y = [1.0, 2.0, 4.0, 7.0];
        let c = fit_global_polynomial(&[0.0, 1.0, 2.0, 3.0], &y, 0, &[5.0]).unwrap();
        let mean = 3.5;
        let ss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        assert!((c.theta_hat[0] - mean).abs() < 1e-12);
        assert!((c.se[0] - ss.sqrt() / 4.0).abs() < 1e-12);
    }
}
