//! Kneedle knee detection on the descending SQI curve, the adaptive
//! rejection threshold derived from it, and the keep/reject verdicts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use crate::model::{Method, RejectionDecision};
use crate::sqi::{SqiReport, MAX_SEVERITY};

pub const DEFAULT_SENSITIVITY: f64 = 1.0;
pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub found: bool,
    pub knee_index: usize,
    pub knee_value: f64,
    pub sensitivity: f64,
}

impl KneeResult {
    fn none(sensitivity: f64) -> Self {
        Self { found: false, knee_index: 0, knee_value: f64::NAN, sensitivity }
    }
}

/// Normalized difference curve of a convex, non-increasing sequence:
/// `(1 − y_n) − x_n` with both axes min-max scaled to `[0, 1]`.
/// `None` when the curve is constant.
pub fn difference_curve(y: &[f64]) -> Option<Vec<f64>> {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    difference_curve_xy(&x, y, 0.0)
}

/// As [`difference_curve`] on explicit abscissae; the y axis is scaled by
/// `max(range, min_span)`.
fn difference_curve_xy(x: &[f64], y: &[f64], min_span: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = hi - lo;
    let x_span = x[n - 1] - x[0];
    if !(span > 0.0) || n < 2 || !(x_span > 0.0) {
        return None;
    }
    let scale = span.max(min_span);
    Some(x.iter().zip(y).map(|(xi, v)| (1.0 - (v - lo) / scale) - (xi - x[0]) / x_span).collect())
}

/// Kneedle for convex, decreasing curves.
///
/// Candidates are the strict local maxima of the difference curve. Each
/// candidate sets a threshold `peak − S · mean(Δx_n)`; the knee is the first
/// candidate after which the curve falls below its threshold before the next
/// candidate takes over (a local minimum resets the threshold to zero).
pub fn kneedle(y: &[f64], sensitivity: f64) -> Result<KneeResult> {
    let n = y.len();
    if n < MIN_POINTS {
        return Err(FaarError::TooFewPoints { need: MIN_POINTS, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite("knee curve".into()));
    }
    if y.windows(2).any(|w| w[1] > w[0]) {
        return Err(FaarError::NotSorted);
    }
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    Ok(kneedle_xy(&x, y, sensitivity, 0.0))
}

fn kneedle_xy(x: &[f64], y: &[f64], sensitivity: f64, min_span: f64) -> KneeResult {
    let n = y.len();
    let Some(diff) = (n >= 3).then(|| difference_curve_xy(x, y, min_span)).flatten() else {
        return KneeResult::none(sensitivity);
    };
    // a straight line leaves only rounding noise in the difference curve
    if diff.iter().all(|d| d.abs() <= 1e-12) {
        return KneeResult::none(sensitivity);
    }
    let is_max = |i: usize| diff[i] > diff[i - 1] && diff[i] > diff[i + 1];
    let is_min = |i: usize| diff[i] < diff[i - 1] && diff[i] < diff[i + 1];
    let Some(first_max) = (1..n - 1).find(|&i| is_max(i)) else {
        return KneeResult::none(sensitivity);
    };
    let step = 1.0 / (n - 1) as f64;
    let mut threshold = f64::NEG_INFINITY;
    let mut candidate = first_max;
    for i in first_max..n - 1 {
        if is_max(i) {
            threshold = diff[i] - sensitivity * step;
            candidate = i;
        }
        if is_min(i) {
            threshold = 0.0;
        }
        if diff[i + 1] < threshold {
            return KneeResult { found: true, knee_index: candidate, knee_value: y[candidate], sensitivity };
        }
    }
    KneeResult::none(sensitivity)
}

/// Smallest y extent the SQI curve is normalized by: half the severity scale.
/// Spreads narrower than this are clean-reference jitter, not an artifact head.
pub const MIN_SQI_SPAN: f64 = MAX_SEVERITY as f64 / 2.0;

/// Descending SQI survival curve: one point per distinct value, placed at the
/// last rank holding it, so `x + 1` epochs score at or above `y`.
pub fn survival_curve(sqis: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = sqis.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, v) in sorted.iter().enumerate() {
        if sorted.get(i + 1) != Some(v) {
            x.push(i as f64);
            y.push(*v);
        }
    }
    (x, y)
}

/// Threshold at the knee of the descending SQI curve; `+∞` when there is no knee.
///
/// SQIs are averages of small integers, so the sorted curve is a staircase.
/// Kneedle runs on its survival form (ties collapsed) with the y axis scaled
/// by at least [`MIN_SQI_SPAN`].
pub fn select_threshold(sqis: &[f64], sensitivity: f64) -> Result<f64> {
    if sqis.len() < MIN_POINTS {
        return Err(FaarError::TooFewEpochs { need: MIN_POINTS, got: sqis.len() });
    }
    if sqis.iter().any(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite("SQI".into()));
    }
    let (x, y) = survival_curve(sqis);
    let k = kneedle_xy(&x, &y, sensitivity, MIN_SQI_SPAN);
    Ok(if k.found { k.knee_value } else { f64::INFINITY })
}

/// `rejected ⇔ sqi > threshold`; ties are kept.
pub fn reject(reports: &[SqiReport], threshold: f64) -> Vec<RejectionDecision> {
    reports
        .iter()
        .map(|r| RejectionDecision {
            epoch_id: r.epoch_id,
            sqi: r.sqi,
            threshold,
            rejected: r.sqi > threshold,
            method: Method::Faar,
        })
        .collect()
}

/// Threshold over the most recent `capacity` SQIs (all of them while fewer
/// have been seen).
#[derive(Debug, Clone)]
pub struct SlidingThreshold {
    capacity: usize,
    sensitivity: f64,
    buf: VecDeque<f64>,
}

impl SlidingThreshold {
    pub fn new(capacity: usize, sensitivity: f64) -> Self {
        Self { capacity: capacity.max(MIN_POINTS), sensitivity, buf: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, sqi: f64) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(sqi);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// `+∞` until enough SQIs are buffered.
    pub fn threshold(&self) -> f64 {
        if self.buf.len() < MIN_POINTS {
            return f64::INFINITY;
        }
        let v: Vec<f64> = self.buf.iter().copied().collect();
        select_threshold(&v, self.sensitivity).unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_has_no_knee() {
        let y: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert!(!kneedle(&y, 1.0).unwrap().found);
        assert!(!kneedle(&[2.0; 8], 1.0).unwrap().found);
    }

    #[test]
    fn errors() {
        assert!(matches!(kneedle(&[3.0, 2.0, 1.0, 0.0], 1.0), Err(FaarError::TooFewPoints { .. })));
        assert!(matches!(kneedle(&[3.0, 2.0, 4.0, 1.0, 0.0], 1.0), Err(FaarError::NotSorted)));
        assert!(matches!(select_threshold(&[1.0, 2.0, 3.0, 4.0], 1.0), Err(FaarError::TooFewEpochs { .. })));
    }

    #[test]
    fn hyperbola_knee_is_difference_argmax() {
        let y: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let k = kneedle(&y, 1.0).unwrap();
        let d = difference_curve(&y).unwrap();
        let argmax = (0..50).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        assert!(k.found);
        assert!(k.knee_index.abs_diff(argmax) <= 1, "{} vs {argmax}", k.knee_index);
        assert_eq!(k.knee_value, y[k.knee_index]);
    }

    #[test]
    fn steep_then_flat_knee() {
        let mut y: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        y.extend((0..40).map(|i| 0.9 - 0.001 * i as f64));
        let k = kneedle(&y, 1.0).unwrap();
        assert!(k.found && (9..=11).contains(&k.knee_index), "{k:?}");
    }

    #[test]
    fn degenerate_distribution_rejects_nothing() {
        assert_eq!(select_threshold(&[0.2; 30], 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn reject_rule() {
        let reports: Vec<SqiReport> = [0.1, 0.5, 0.5, 0.9]
            .iter()
            .enumerate()
            .map(|(i, s)| SqiReport {
                epoch_id: i as u64,
                sqi: *s,
                severity: ndarray::Array3::zeros((1, 1, 1)),
                worst_channel: 0,
            })
            .collect();
        assert!(reject(&reports, f64::INFINITY).iter().all(|d| !d.rejected));
        assert!(reject(&reports, 0.0).iter().all(|d| d.rejected));
        let mixed: Vec<bool> = reject(&reports, 0.5).iter().map(|d| d.rejected).collect();
        assert_eq!(mixed, vec![false, false, false, true]);
    }

    #[test]
    fn bimodal_threshold_separates_modes() {
        let mut s: Vec<f64> = (0..95).map(|i| 0.02 + 0.03 * i as f64 / 94.0).collect();
        s.extend((0..5).map(|i| 1.5 + 0.25 * i as f64));
        let t = select_threshold(&s, 1.0).unwrap();
        assert!((0.05..1.5).contains(&t), "threshold {t}");
        assert_eq!(s.iter().filter(|v| **v > t).count(), 5);
    }

    #[test]
    fn survival_curve_collapses_ties() {
        let (x, y) = survival_curve(&[0.5, 0.25, 0.5, 1.0, 0.25, 0.25]);
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
        assert_eq!(x, vec![0.0, 2.0, 5.0]);
    }

    #[test]
    fn duplication_leaves_threshold_unchanged() {
        let mut s: Vec<f64> = (0..60).map(|i| (i % 7) as f64 / 32.0).collect();
        s.extend([1.5, 1.25, 0.9, 0.8]);
        let t = select_threshold(&s, 1.0).unwrap();
        let triple: Vec<f64> = s.iter().chain(&s).chain(&s).copied().collect();
        assert_eq!(select_threshold(&triple, 1.0).unwrap(), t);
    }

    #[test]
    fn narrow_clean_spread_rejects_little() {
        // staircase binomial-like clean SQIs on a 1/32 grid
        let mut s = Vec::new();
        for (level, count) in [(0, 20), (2, 60), (4, 120), (6, 140), (8, 100), (10, 40), (12, 10), (13, 3), (14, 1)] {
            s.extend(std::iter::repeat(level as f64 / 32.0).take(count));
        }
        let t = select_threshold(&s, 1.0).unwrap();
        let rate = s.iter().filter(|v| **v > t).count() as f64 / s.len() as f64;
        assert!(rate <= 0.05, "rate {rate} at {t}");
    }
}
