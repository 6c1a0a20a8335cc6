//! Local linear kernel regression of pseudo-outcomes on the effect modifier,
//! with sandwich standard errors and pointwise Wald intervals.
//!
//! At a point `v` with bandwidth `h`, the fit solves the weighted least-squares
//! problem with weights `K((V_i - v) / h) / h` and regressors `(1, V_i - v)`.
//! The variance is the `(1,1)` element of `P_n[phi phi^T]` with
//! `phi_i = D^{-1} g_i K_h(V_i - v) r_i`, `D = P_n[g K_h g^T]`, and the
//! standard error is `sigma / sqrt(n)`.

mod bandwidth;
mod global;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::crossfit::PseudoOutcomes;
use crate::error::{Error, Result};
use crate::parallel::map_range;

pub use bandwidth::{cv_scores, default_bandwidth_grid, select_bandwidth_cv, BandwidthSelection, CvScore};
pub use global::fit_global_polynomial;

/// Normal quantile for two-sided 95% intervals.
pub const WALD_Z: f64 = 1.96;
/// Diagonal jitter for a singular 2x2 system.
pub const SINGULAR_JITTER: f64 = 1e-10;
/// Bandwidth multiplier applied to a degenerate grid point.
pub const WIDEN_FACTOR: f64 = 1.5;
pub const MAX_WIDENINGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
}

impl KernelSpec {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelSpec::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `int u^2 K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov => 0.2,
        }
    }

    /// `int K(u)^2 du`.
    pub fn roughness(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov => 0.6,
        }
    }
}

/// Epanechnikov kernel `0.75 (1 - u^2)` on `[-1, 1]`.
pub fn kernel_eval(u: f64) -> f64 {
    KernelSpec::Epanechnikov.eval(u)
}

/// Leading smoothing bias `theta''(v) h^2 / 2 * int u^2 K`.
pub fn smoothing_bias_reference(theta_second_derivative: f64, h: f64, kernel: KernelSpec) -> f64 {
    theta_second_derivative * h * h / 2.0 * kernel.second_moment()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthSpec {
    Fixed {
        h: f64,
    },
    /// Least-squares cross-validation over `grid`, or the default grid when
    /// none is given.
    Cv {
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default = "default_cv_folds")]
        folds: usize,
    },
}

fn default_cv_folds() -> usize {
    5
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Cv { grid: None, folds: default_cv_folds() }
    }
}

impl BandwidthSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BandwidthSpec::Fixed { h } if !(*h > 0.0 && h.is_finite()) => {
                Err(Error::config("smoother.bandwidth.h", "must be a finite value > 0"))
            }
            BandwidthSpec::Cv { folds, .. } if *folds < 2 => {
                Err(Error::config("smoother.bandwidth.folds", format!("must be >= 2, got {folds}")))
            }
            BandwidthSpec::Cv { grid: Some(grid), .. } => validate_grid(grid),
            _ => Ok(()),
        }
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("smoother.bandwidth.grid", "must not be empty"));
    }
    if grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::config("smoother.bandwidth.grid", "values must be finite and > 0"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("smoother.bandwidth.grid", "values must be strictly increasing"));
    }
    Ok(())
}

/// `(v, xi)` pairs sorted by `v` (stable), for window lookup by binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedPairs {
    v: Vec<f64>,
    xi: Vec<f64>,
}

impl SortedPairs {
    pub fn new(v: &[f64], xi: &[f64]) -> Result<Self> {
        if v.len() != xi.len() {
            return Err(Error::Input("v and xi lengths differ".into()));
        }
        if v.iter().chain(xi).any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite smoother input".into()));
        }
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        Ok(SortedPairs { v: order.iter().map(|&i| v[i]).collect(), xi: order.iter().map(|&i| xi[i]).collect() })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (v, xi): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        Self::new(&v, &xi)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Rows with `keep[i]`, still sorted.
    pub(crate) fn subset(&self, keep: impl Fn(usize) -> bool) -> SortedPairs {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        SortedPairs { v: idx.iter().map(|&i| self.v[i]).collect(), xi: idx.iter().map(|&i| self.xi[i]).collect() }
    }

    fn window(&self, v: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.v.partition_point(|&x| x <= v - h);
        let hi = self.v.partition_point(|&x| x < v + h);
        lo..hi.max(lo)
    }

    /// Weighted moments of the window around `v`.
    fn moments(&self, v: f64, h: f64) -> Result<Moments> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("bandwidth must be positive, got {h}")));
        }
        let range = self.window(v, h);
        let mut sums = [0.0f64; 5];
        let mut count = 0usize;
        let (mut lowest, mut highest) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in range.clone() {
            let d = self.v[i] - v;
            let w = kernel_eval(d / h) / h;
            if w <= 0.0 {
                continue;
            }
            count += 1;
            lowest = lowest.min(self.v[i]);
            highest = highest.max(self.v[i]);
            sums[0] += w;
            sums[1] += w * d;
            sums[2] += w * d * d;
            sums[3] += w * self.xi[i];
            sums[4] += w * d * self.xi[i];
        }
        let distinct = match count {
            0 => 0,
            _ if lowest == highest => 1,
            _ => 2,
        };
        if count < 2 || distinct < 2 {
            return Err(Error::DegenerateWindow { count, distinct });
        }
        let [mut s0, s1, mut s2, t0, t1] = sums;
        let mut det = s0 * s2 - s1 * s1;
        let jittered = !(det > 1e-14 * s0 * s2);
        if jittered {
            s0 += SINGULAR_JITTER;
            s2 += SINGULAR_JITTER;
            det = s0 * s2 - s1 * s1;
        }
        Ok(Moments { range, count, s0, s1, s2, det, t0, t1, jittered })
    }

    /// `sum_i ((S^{-1} g_i)_1 w_i r_i)^2` with `S = n D`; equals `sigma^2 / n`.
    fn sandwich(&self, m: &Moments, v: f64, h: f64, theta: f64, slope: f64) -> f64 {
        let mut q = 0.0;
        for i in m.range.clone() {
            let d = self.v[i] - v;
            let w = kernel_eval(d / h) / h;
            if w <= 0.0 {
                continue;
            }
            let r = self.xi[i] - theta - slope * d;
            let phi = (m.s2 - m.s1 * d) / m.det * w * r;
            q += phi * phi;
        }
        q
    }

    /// Local linear fit at `v` with bandwidth `h`.
    pub fn fit(&self, v: f64, h: f64) -> Result<LocalLinearFit> {
        let m = self.moments(v, h)?;
        let theta = (m.s2 * m.t0 - m.s1 * m.t1) / m.det;
        let slope = (m.s0 * m.t1 - m.s1 * m.t0) / m.det;
        let q = self.sandwich(&m, v, h, theta, slope);
        let sigma_sq = self.len() as f64 * q;
        Ok(LocalLinearFit { theta, slope, sigma_sq, se: q.sqrt(), n_effective: m.count, jittered: m.jittered })
    }

    /// Intercept of the local linear fit only.
    pub(crate) fn theta(&self, v: f64, h: f64) -> Result<f64> {
        let m = self.moments(v, h)?;
        Ok((m.s2 * m.t0 - m.s1 * m.t1) / m.det)
    }

    /// Sandwich variance at `v` for given coefficients `(theta, slope)`.
    pub fn sandwich_variance(&self, v: f64, h: f64, beta: (f64, f64)) -> Result<f64> {
        let m = self.moments(v, h)?;
        Ok(self.len() as f64 * self.sandwich(&m, v, h, beta.0, beta.1))
    }
}

struct Moments {
    range: std::ops::Range<usize>,
    count: usize,
    s0: f64,
    s1: f64,
    s2: f64,
    det: f64,
    t0: f64,
    t1: f64,
    jittered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLinearFit {
    pub theta: f64,
    pub slope: f64,
    /// Sandwich variance `sigma^2` (the `(1,1)` element of `P_n[phi phi^T]`).
    pub sigma_sq: f64,
    /// `sqrt(sigma^2 / n)`.
    pub se: f64,
    /// Points with positive kernel weight.
    pub n_effective: usize,
    pub jittered: bool,
}

/// `(theta, slope)` of the local linear fit at `v`.
pub fn local_linear_fit(pairs: &[(f64, f64)], v: f64, h: f64) -> Result<(f64, f64)> {
    let fit = SortedPairs::from_pairs(pairs)?.fit(v, h)?;
    Ok((fit.theta, fit.slope))
}

/// Sandwich variance `sigma^2` at `v` for coefficients `beta = (theta, slope)`.
pub fn sandwich_variance(pairs: &[(f64, f64)], v: f64, h: f64, beta: (f64, f64)) -> Result<f64> {
    SortedPairs::from_pairs(pairs)?.sandwich_variance(v, h, beta)
}

/// Per-point annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PointFlags {
    /// Grid point outside the observed range of `V`.
    pub extrapolation: bool,
    /// Number of times the bandwidth was widened at this point.
    pub widened: u8,
    /// No usable window even after widening; estimates are NaN.
    pub degenerate: bool,
    /// Singular normal equations were jittered.
    pub jittered: bool,
}

impl PointFlags {
    /// `;`-separated labels, empty when nothing is flagged.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.extrapolation {
            parts.push("extrapolation".to_string());
        }
        if self.widened > 0 {
            parts.push(format!("widened{}", self.widened));
        }
        if self.degenerate {
            parts.push("degenerate".to_string());
        }
        if self.jittered {
            parts.push("jittered".to_string());
        }
        parts.join(";")
    }

    pub fn is_clean(&self) -> bool {
        *self == PointFlags::default()
    }
}

/// Estimated curve on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateCurve {
    pub grid: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub slope_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub n_effective: Vec<usize>,
    /// Global bandwidth; `None` for global polynomial fits.
    pub bandwidth: Option<f64>,
    /// Bandwidth actually used per point (differs after widening).
    pub point_bandwidth: Vec<f64>,
    pub flags: Vec<PointFlags>,
    /// Number of pseudo-outcomes.
    pub n: usize,
}

impl CateCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// CSV with columns `v,theta_hat,slope_hat,se,ci_lower,ci_upper,n_effective,flags`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["v", "theta_hat", "slope_hat", "se", "ci_lower", "ci_upper", "n_effective", "flags"])?;
        for k in 0..self.len() {
            w.write_record([
                self.grid[k].to_string(),
                self.theta_hat[k].to_string(),
                self.slope_hat[k].to_string(),
                self.se[k].to_string(),
                self.ci_lower[k].to_string(),
                self.ci_upper[k].to_string(),
                self.n_effective[k].to_string(),
                self.flags[k].label(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct PointEstimate {
    fit: Option<LocalLinearFit>,
    h: f64,
    widened: u8,
    n_effective: usize,
}

fn estimate_point(data: &SortedPairs, v: f64, h: f64) -> Result<PointEstimate> {
    let mut current = h;
    let mut initial_count = None;
    for widened in 0..=MAX_WIDENINGS {
        match data.fit(v, current) {
            Ok(fit) => return Ok(PointEstimate { n_effective: fit.n_effective, fit: Some(fit), h: current, widened: widened as u8 }),
            Err(Error::DegenerateWindow { count, .. }) => {
                initial_count.get_or_insert(count);
                current *= WIDEN_FACTOR;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PointEstimate { fit: None, h, widened: MAX_WIDENINGS as u8, n_effective: initial_count.unwrap_or(0) })
}

/// Curve at a fixed global bandwidth. Degenerate points are widened up to
/// [`MAX_WIDENINGS`] times, then reported as NaN.
pub fn curve_at_bandwidth(data: &SortedPairs, grid: &[f64], h: f64) -> Result<CateCurve> {
    if data.is_empty() {
        return Err(Error::Input("no pseudo-outcomes to smooth".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Bandwidth(format!("bandwidth must be positive, got {h}")));
    }
    let (lo, hi) = (data.v[0], data.v[data.len() - 1]);
    let points = map_range(grid.len(), |k| estimate_point(data, grid[k], h));
    let m = grid.len();
    let mut curve = CateCurve {
        grid: grid.to_vec(),
        theta_hat: Vec::with_capacity(m),
        slope_hat: Vec::with_capacity(m),
        se: Vec::with_capacity(m),
        ci_lower: Vec::with_capacity(m),
        ci_upper: Vec::with_capacity(m),
        n_effective: Vec::with_capacity(m),
        bandwidth: Some(h),
        point_bandwidth: Vec::with_capacity(m),
        flags: Vec::with_capacity(m),
        n: data.len(),
    };
    for (k, point) in points.into_iter().enumerate() {
        let point = point?;
        let mut flags = PointFlags { extrapolation: grid[k] < lo || grid[k] > hi, ..PointFlags::default() };
        let (theta, slope, se) = match point.fit {
            Some(fit) => {
                flags.widened = point.widened;
                flags.jittered = fit.jittered;
                (fit.theta, fit.slope, fit.se)
            }
            None => {
                flags.degenerate = true;
                log::warn!("no usable window at v = {} even after widening", grid[k]);
                (f64::NAN, f64::NAN, f64::NAN)
            }
        };
        curve.theta_hat.push(theta);
        curve.slope_hat.push(slope);
        curve.se.push(se);
        curve.ci_lower.push(theta - WALD_Z * se);
        curve.ci_upper.push(theta + WALD_Z * se);
        curve.n_effective.push(point.n_effective);
        curve.point_bandwidth.push(point.h);
        curve.flags.push(flags);
    }
    Ok(curve)
}

/// Selects the bandwidth per `bw` and evaluates the curve on `grid`.
pub fn estimate_cate_curve(pseudo: &PseudoOutcomes, grid: &[f64], bw: &BandwidthSpec, seed: u64) -> Result<CateCurve> {
    bw.validate()?;
    let data = SortedPairs::new(&pseudo.v, &pseudo.xi)?;
    let h = match bw {
        BandwidthSpec::Fixed { h } => *h,
        BandwidthSpec::Cv { grid: candidates, folds } => {
            let candidates = match candidates {
                Some(c) => c.clone(),
                None => default_bandwidth_grid(&pseudo.v)?,
            };
            select_bandwidth_cv(&data, &candidates, *folds, seed)?.selected
        }
    };
    curve_at_bandwidth(&data, grid, h)
}

/// `m` equispaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect(),
    }
}
