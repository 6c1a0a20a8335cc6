//! Grid-integrated Monte Carlo performance metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One replicate's estimates on the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCurve {
    pub theta_hat: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Smoothed target `theta*(v)` for this replicate's bandwidth, when the
    /// estimator is a kernel smoother.
    pub smoothed_target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedMetrics {
    /// Grid mean of `|mean_r(theta_hat - theta)|`.
    pub integrated_abs_bias: f64,
    /// Grid mean of `sqrt(mean_r (theta_hat - theta)^2)`.
    pub integrated_rmse: f64,
    /// Percent of intervals covering `theta(v)`, averaged over the grid.
    pub coverage_truth: f64,
    /// Coverage of the smoothed target `theta*(v)`.
    pub coverage_smoothed: Option<f64>,
    /// Coverage of the replicate-mean curve.
    pub coverage_mean_curve: f64,
    pub replicates: usize,
    /// Replicate estimates removed from each tail at every grid point.
    pub trimmed_per_tail: usize,
    /// Non-finite estimates skipped (degenerate windows).
    pub skipped_points: usize,
}

/// Integrated |bias|, RMSE and coverage against `truth`. With
/// `trim_per_tail > 0`, the `floor(trim_per_tail * R)` smallest and largest
/// estimates are dropped at each grid point before anything is computed.
pub fn integrated_metrics(replicates: &[ReplicateCurve], truth: &[f64], trim_per_tail: f64) -> Result<IntegratedMetrics> {
    let m = truth.len();
    if replicates.len() < 2 {
        return Err(Error::Input(format!("need at least 2 replicates, got {}", replicates.len())));
    }
    if m == 0 {
        return Err(Error::Input("empty evaluation grid".into()));
    }
    if !(0.0..0.5).contains(&trim_per_tail) {
        return Err(Error::Input("trim fraction per tail must lie in [0, 0.5)".into()));
    }
    for r in replicates {
        let lens = [r.theta_hat.len(), r.ci_lower.len(), r.ci_upper.len()];
        if lens.iter().any(|&l| l != m) || r.smoothed_target.as_ref().is_some_and(|s| s.len() != m) {
            return Err(Error::Input(format!("replicate curve length differs from the truth grid ({m})")));
        }
    }
    let has_smoothed = replicates.iter().all(|r| r.smoothed_target.is_some());
    let trim = (trim_per_tail * replicates.len() as f64).floor() as usize;
    let (mut bias, mut rmse, mut cov_truth, mut cov_smoothed, mut cov_mean) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut skipped = 0;
    let mut used_points = 0;
    for k in 0..m {
        let mut kept: Vec<&ReplicateCurve> = replicates.iter().filter(|r| r.theta_hat[k].is_finite()).collect();
        skipped += replicates.len() - kept.len();
        kept.sort_by(|a, b| a.theta_hat[k].total_cmp(&b.theta_hat[k]));
        let kept = if kept.len() > 2 * trim { &kept[trim..kept.len() - trim] } else { &kept[..0] };
        if kept.is_empty() {
            continue;
        }
        used_points += 1;
        let r = kept.len() as f64;
        let errors: Vec<f64> = kept.iter().map(|c| c.theta_hat[k] - truth[k]).collect();
        bias += (errors.iter().sum::<f64>() / r).abs();
        rmse += (errors.iter().map(|e| e * e).sum::<f64>() / r).sqrt();
        let covers = |target: &dyn Fn(&ReplicateCurve) -> f64| {
            100.0 * kept.iter().filter(|c| c.ci_lower[k] <= target(c) && target(c) <= c.ci_upper[k]).count() as f64 / r
        };
        let mean_curve = kept.iter().map(|c| c.theta_hat[k]).sum::<f64>() / r;
        cov_truth += covers(&|_| truth[k]);
        cov_mean += covers(&|_| mean_curve);
        if has_smoothed {
            cov_smoothed += covers(&|c| c.smoothed_target.as_ref().expect("checked")[k]);
        }
    }
    if used_points == 0 {
        return Err(Error::Input("no finite estimates at any grid point".into()));
    }
    let g = used_points as f64;
    Ok(IntegratedMetrics {
        integrated_abs_bias: bias / g,
        integrated_rmse: rmse / g,
        coverage_truth: cov_truth / g,
        coverage_smoothed: has_smoothed.then_some(cov_smoothed / g),
        coverage_mean_curve: cov_mean / g,
        replicates: replicates.len(),
        trimmed_per_tail: trim,
        skipped_points: skipped,
    })
}
