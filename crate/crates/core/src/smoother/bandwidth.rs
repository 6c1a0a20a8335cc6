//! K-fold least-squares cross-validation of the global bandwidth.

use serde::{Deserialize, Serialize};

use super::{validate_grid, SortedPairs};
use crate::crossfit::partition_folds;
use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::rng::{derive_seed, stream};

pub const DEFAULT_GRID_SIZE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub h: f64,
    /// Mean squared out-of-fold prediction error.
    pub score: f64,
    /// Held-out points predicted by the training-fold mean because their
    /// window was degenerate.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub selected: f64,
    pub scores: Vec<CvScore>,
}

impl BandwidthSelection {
    /// Score table sorted by `h` with columns `h,cv_score,fallbacks,selected`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut rows: Vec<&CvScore> = self.scores.iter().collect();
        rows.sort_by(|a, b| a.h.total_cmp(&b.h));
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["h", "cv_score", "fallbacks", "selected"])?;
        for s in rows {
            w.write_record([s.h.to_string(), s.score.to_string(), s.fallbacks.to_string(), (s.h == self.selected).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 30 log-spaced bandwidths on `[0.1 sd n^(-1/5), 3 sd]`, `sd` the sample
/// standard deviation of `v`.
pub fn default_bandwidth_grid(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Bandwidth("need at least 2 points for a bandwidth grid".into()));
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::Bandwidth("effect modifier has no spread".into()));
    }
    let lo = 0.1 * sd * (n as f64).powf(-0.2);
    let hi = 3.0 * sd;
    let (a, b) = (lo.ln(), hi.ln());
    let last = DEFAULT_GRID_SIZE - 1;
    Ok((0..DEFAULT_GRID_SIZE).map(|k| if k == last { hi } else { (a + (b - a) * k as f64 / last as f64).exp() }).collect())
}

/// Cross-validation score for every bandwidth in `grid`.
pub fn cv_scores(data: &SortedPairs, grid: &[f64], folds: usize, seed: u64) -> Result<Vec<CvScore>> {
    validate_grid(grid)?;
    let n = data.len();
    if folds < 2 || folds > n {
        return Err(Error::Bandwidth(format!("cross-validation needs 2 <= folds <= n (folds = {folds}, n = {n})")));
    }
    let assignment = partition_folds(n, folds, derive_seed(seed, &[stream::BANDWIDTH]))?;
    let fold_of = assignment.fold_of();
    let training: Vec<(SortedPairs, f64)> = (0..folds)
        .map(|f| {
            let train = data.subset(|i| fold_of[i] != f);
            let mean = train.xi().iter().sum::<f64>() / train.len() as f64;
            (train, mean)
        })
        .collect();
    let scores = map_range(grid.len(), |k| -> Result<CvScore> {
        let h = grid[k];
        let mut sse = 0.0;
        let mut fallbacks = 0;
        for i in 0..n {
            let (train, mean) = &training[fold_of[i]];
            let prediction = match train.theta(data.v()[i], h) {
                Ok(theta) => theta,
                Err(Error::DegenerateWindow { .. }) => {
                    fallbacks += 1;
                    *mean
                }
                Err(e) => return Err(e),
            };
            sse += (data.xi()[i] - prediction).powi(2);
        }
        Ok(CvScore { h, score: sse / n as f64, fallbacks })
    });
    let scores: Vec<CvScore> = scores.into_iter().collect::<Result<_>>()?;
    if scores.iter().all(|s| s.fallbacks == n) {
        return Err(Error::Bandwidth("every candidate bandwidth is degenerate on every fold".into()));
    }
    Ok(scores)
}

/// Bandwidth minimizing the cross-validation score; ties go to the smaller
/// bandwidth.
pub fn select_bandwidth_cv(data: &SortedPairs, grid: &[f64], folds: usize, seed: u64) -> Result<BandwidthSelection> {
    let scores = cv_scores(data, grid, folds, seed)?;
    let best = scores
        .iter()
        .filter(|s| s.fallbacks < data.len())
        .fold(None::<&CvScore>, |best, s| match best {
            Some(b) if !(s.score < b.score) => Some(b),
            _ => Some(s),
        })
        .expect("at least one usable bandwidth");
    Ok(BandwidthSelection { selected: best.h, scores })
}
