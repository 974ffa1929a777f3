//! Split conformal calibration of volume intervals, standard and weighted.
//!
//! Scores are `max(lo - y, y - hi)`: negative when the truth sits strictly
//! inside the raw interval, positive by the distance it falls outside. The
//! corrective `q_hat` is an order statistic of the calibration scores (standard
//! rule) or the `1 - alpha` quantile of the importance-reweighted score
//! distribution (weighted rule). Either may be `+inf` when the calibration set
//! cannot certify the requested level, in which case the interval is `[0, +inf)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trimask::VolumeTriple;

/// Slack used when comparing accumulated probability mass against `1 - alpha`.
///
/// Sums of equal masses such as `19 * (1/20)` land a few ulps either side of
/// the exact value; both quantile rules treat anything within this slack as
/// reaching the level so that they agree with exact arithmetic.
pub const MASS_TOLERANCE: f64 = 1e-10;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Nonconformity of a truth `y` against a raw interval `[lo, hi]`.
pub fn score(lo: f64, hi: f64, y: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::invalid(format!(
            "interval bounds out of order: {lo} > {hi}"
        )));
    }
    Ok((lo - y).max(y - hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    scores: Vec<f64>,
    ids: Vec<u64>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        let ids = (0..scores.len() as u64).collect();
        Self::with_ids(scores, ids)
    }

    pub fn with_ids(scores: Vec<f64>, ids: Vec<u64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration scores"));
        }
        if ids.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                actual: ids.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("calibration scores"));
        }
        Ok(Self { scores, ids })
    }

    /// Scores of `triples` against `truths`, in order.
    pub fn from_triples(triples: &[VolumeTriple], truths: &[f64]) -> Result<Self> {
        if triples.len() != truths.len() {
            return Err(Error::LengthMismatch {
                expected: triples.len(),
                actual: truths.len(),
            });
        }
        let scores = triples
            .iter()
            .zip(truths)
            .map(|(t, &y)| score(t.lo, t.hi, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scores)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Probability masses of the calibration points and of the test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedWeights {
    pub p: Vec<f64>,
    pub p_test: f64,
}

impl NormalizedWeights {
    /// Equal mass `1/(n+1)` on every calibration point and on the test point.
    pub fn uniform(n: usize) -> Self {
        let m = 1.0 / (n as f64 + 1.0);
        Self {
            p: vec![m; n],
            p_test: m,
        }
    }
}

/// `p_i = w_i / (sum_j w_j + w_test)`, `p_test = w_test / (same)`.
pub fn normalized_weights(w_calib: &[f64], w_test: f64) -> Result<NormalizedWeights> {
    if w_calib
        .iter()
        .chain(std::iter::once(&w_test))
        .any(|w| !(w.is_finite() && *w > 0.0))
    {
        return Err(Error::invalid("importance weights must be finite and > 0"));
    }
    let total: f64 = w_calib.iter().sum::<f64>() + w_test;
    Ok(NormalizedWeights {
        p: w_calib.iter().map(|w| w / total).collect(),
        p_test: w_test / total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileResult {
    /// Corrective term; `f64::INFINITY` when the level cannot be certified.
    pub q_hat: f64,
    pub alpha: f64,
    pub weighted: bool,
}

impl QuantileResult {
    pub fn is_infinite(&self) -> bool {
        self.q_hat.is_infinite()
    }
}

/// `ceil((n+1)(1-alpha))`-th smallest score, or `+inf` when that exceeds `n`.
pub fn standard_quantile(scores: &ScoreSet, alpha: f64) -> Result<QuantileResult> {
    check_alpha(alpha)?;
    let n = scores.len();
    let k = ((n as f64 + 1.0) * (1.0 - alpha) - MASS_TOLERANCE * (n as f64 + 1.0)).ceil() as usize;
    let k = k.max(1);
    let q_hat = if k > n {
        f64::INFINITY
    } else {
        let mut sorted = scores.scores.clone();
        sorted.select_nth_unstable_by(k - 1, cmp_f64);
        sorted[k - 1]
    };
    Ok(QuantileResult {
        q_hat,
        alpha,
        weighted: false,
    })
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("scores are finite")
}

/// Smallest observed score `s_j` whose reweighted cumulative mass
/// `sum_i p_i 1{s_i <= s_j}` reaches `1 - alpha`. The test point's own mass is
/// not part of the sum, so the level may be unreachable; the result is then
/// `+inf`.
pub fn weighted_quantile(
    scores: &ScoreSet,
    weights: &NormalizedWeights,
    alpha: f64,
) -> Result<QuantileResult> {
    check_alpha(alpha)?;
    if weights.p.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: weights.p.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(&scores.scores[a], &scores.scores[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| scores.scores[i]).collect();
    let masses: Vec<f64> = order.iter().map(|&i| weights.p[i]).collect();
    Ok(QuantileResult {
        q_hat: scan_sorted(&sorted, masses.into_iter(), alpha),
        alpha,
        weighted: true,
    })
}

/// Walks ascending scores, accumulating masses one tie-group at a time.
fn scan_sorted(sorted: &[f64], masses: impl Iterator<Item = f64>, alpha: f64) -> f64 {
    let target = 1.0 - alpha - MASS_TOLERANCE;
    let mut cum = 0.0;
    let mut masses = masses.peekable();
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i];
        while i < sorted.len() && sorted[i] == value {
            cum += masses.next().unwrap_or(0.0);
            i += 1;
        }
        if cum >= target {
            return value;
        }
    }
    f64::INFINITY
}

/// Calibration scores pre-sorted together with their raw importance weights,
/// for evaluating the weighted quantile at many test points.
#[derive(Debug, Clone)]
pub struct WeightedCalibration {
    sorted_scores: Vec<f64>,
    sorted_weights: Vec<f64>,
    total: f64,
}

impl WeightedCalibration {
    pub fn new(scores: &ScoreSet, w_calib: &[f64]) -> Result<Self> {
        if w_calib.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                actual: w_calib.len(),
            });
        }
        if w_calib.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("importance weights must be finite and > 0"));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| cmp_f64(&scores.scores[a], &scores.scores[b]));
        Ok(Self {
            sorted_scores: order.iter().map(|&i| scores.scores[i]).collect(),
            sorted_weights: order.iter().map(|&i| w_calib[i]).collect(),
            total: w_calib.iter().sum(),
        })
    }

    /// Same result as [`weighted_quantile`] with masses from
    /// [`normalized_weights`]`(w_calib, w_test)`.
    pub fn quantile(&self, w_test: f64, alpha: f64) -> Result<QuantileResult> {
        check_alpha(alpha)?;
        if !(w_test.is_finite() && w_test > 0.0) {
            return Err(Error::invalid("importance weights must be finite and > 0"));
        }
        let denom = self.total + w_test;
        let masses = self.sorted_weights.iter().map(|w| w / denom);
        Ok(QuantileResult {
            q_hat: scan_sorted(&self.sorted_scores, masses, alpha),
            alpha,
            weighted: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveInterval {
    pub lo: f64,
    /// `f64::INFINITY` for an unbounded interval.
    pub hi: f64,
    pub alpha: f64,
    pub q_hat_used: f64,
}

impl PredictiveInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `[max(0, lo - q), hi + q]`; `[0, +inf)` for an infinite `q`.
pub fn calibrated_interval(vt: &VolumeTriple, q: &QuantileResult) -> PredictiveInterval {
    let (lo, hi) = if q.is_infinite() {
        (0.0, f64::INFINITY)
    } else {
        ((vt.lo - q.q_hat).max(0.0), vt.hi + q.q_hat)
    };
    PredictiveInterval {
        lo,
        hi: hi.max(lo),
        alpha: q.alpha,
        q_hat_used: q.q_hat,
    }
}

pub fn coverage(intervals: &[PredictiveInterval], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: intervals.len(),
            actual: truths.len(),
        });
    }
    if intervals.is_empty() {
        return Err(Error::Empty("intervals"));
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|(pi, &y)| pi.contains(y))
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

/// Mean of `hi - lo`; `+inf` as soon as one interval is unbounded.
pub fn mean_width(intervals: &[PredictiveInterval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Empty("intervals"));
    }
    Ok(intervals.iter().map(PredictiveInterval::width).sum::<f64>() / intervals.len() as f64)
}
