//! Evaluation metrics for reconstructed ECG and detected heartbeats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default beat-matching tolerance, in seconds.
pub const DEFAULT_BEAT_TOLERANCE: f64 = 0.15;
/// Slack added to the tolerance so that grid-aligned times compare exactly.
pub const TOLERANCE_SLACK: f64 = 1e-9;

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 1)?;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::InvalidInput(format!("need at least {min} samples, got {}", x.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatMatch {
    /// `(detected index, truth index)` pairs, ascending.
    pub pairs: Vec<(usize, usize)>,
    pub misses: usize,
    pub n_truth: usize,
    /// Mean `|t_det − t_truth|` over the pairs, in seconds. `None` without pairs.
    pub mean_abs_error: Option<f64>,
}

impl BeatMatch {
    pub fn mdr(&self) -> f64 {
        self.misses as f64 / self.n_truth as f64
    }

    pub fn heartbeat_error_ms(&self) -> Option<f64> {
        self.mean_abs_error.map(|e| e * 1e3)
    }
}

pub fn within_tolerance(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol + TOLERANCE_SLACK
}

/// One-to-one matching of detections to ground-truth beats.
///
/// Returns the matching with the most pairs within `tol`, and among those
/// the smallest total absolute error. On a line an optimal matching never
/// needs crossing pairs, so a longest-common-subsequence style table over
/// both sorted lists finds it in `O(n·m)`.
pub fn match_beats(detected: &[f64], truth: &[f64], tol: f64) -> Result<BeatMatch> {
    if truth.is_empty() {
        return Err(Error::UndefinedMdr);
    }
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(detected) || !sorted(truth) {
        return Err(Error::InvalidInput("beat lists must be sorted".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol}")));
    }

    let (n, m) = (truth.len(), detected.len());
    // best[i][j]: (pairs, total error) over truth[..i] and detected[..j].
    let mut best = vec![vec![(0usize, 0.0f64); m + 1]; n + 1];
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    for i in 1..=n {
        for j in 1..=m {
            let mut cell = best[i - 1][j];
            if better(best[i][j - 1], cell) {
                cell = best[i][j - 1];
            }
            let (t, d) = (truth[i - 1], detected[j - 1]);
            if within_tolerance(d, t, tol) {
                let (c, e) = best[i - 1][j - 1];
                let cand = (c + 1, e + (d - t).abs());
                if better(cand, cell) {
                    cell = cand;
                }
            }
            best[i][j] = cell;
        }
    }

    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if best[i][j] == best[i - 1][j] {
            i -= 1;
        } else if best[i][j] == best[i][j - 1] {
            j -= 1;
        } else {
            pairs.push((j - 1, i - 1));
            i -= 1;
            j -= 1;
        }
    }
    pairs.reverse();

    let (count, total) = best[n][m];
    Ok(BeatMatch {
        pairs,
        misses: n - count,
        n_truth: n,
        mean_abs_error: (count > 0).then(|| total / count as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// mV
    pub rmse: f64,
    pub pcc: f64,
    /// ms
    pub heartbeat_error: f64,
    pub mdr: f64,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rmse >= 0.0
            && (-1.0..=1.0).contains(&self.pcc)
            && self.heartbeat_error >= 0.0
            && (0.0..=1.0).contains(&self.mdr);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("metric values out of range: {self:?}")))
        }
    }

    fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("rmse", self.rmse),
            ("pcc", self.pcc),
            ("heartbeat_error", self.heartbeat_error),
            ("mdr", self.mdr),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lower,
    Higher,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Lower => -1.0,
            Direction::Higher => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDirections {
    pub rmse: Direction,
    pub pcc: Direction,
    pub heartbeat_error: Direction,
    pub mdr: Direction,
}

impl Default for MetricDirections {
    fn default() -> Self {
        Self {
            rmse: Direction::Lower,
            pcc: Direction::Higher,
            heartbeat_error: Direction::Lower,
            mdr: Direction::Lower,
        }
    }
}

impl MetricDirections {
    fn signs(&self) -> [f64; 4] {
        [self.rmse, self.pcc, self.heartbeat_error, self.mdr].map(Direction::sign)
    }
}

/// Mean signed relative improvement over `baseline`, in percent.
///
/// Each metric contributes `±(M_method − M_base) / M_base`, signed so that
/// an improvement is positive.
pub fn delta_m(method: &MetricReport, baseline: &MetricReport, dirs: &MetricDirections) -> Result<f64> {
    let mut sum = 0.0;
    for ((&(name, m), &(_, b)), s) in method.values().iter().zip(&baseline.values()).zip(dirs.signs()) {
        if b == 0.0 {
            return Err(Error::ZeroBaseline(name));
        }
        sum += s * (m - b) / b;
    }
    Ok(100.0 * sum / 4.0)
}

/// Full report for one method against reference signals and beats.
pub fn evaluate(
    predicted: &[f64],
    reference: &[f64],
    detected_beats: &[f64],
    true_beats: &[f64],
    tol: f64,
) -> Result<MetricReport> {
    let matched = match_beats(detected_beats, true_beats, tol)?;
    let heartbeat_error = matched
        .heartbeat_error_ms()
        .ok_or_else(|| Error::InvalidInput("no detection matched a true beat; heartbeat error undefined".into()))?;
    Ok(MetricReport {
        rmse: rmse(predicted, reference)?,
        pcc: pcc(predicted, reference)?,
        heartbeat_error,
        mdr: matched.mdr(),
    })
}
