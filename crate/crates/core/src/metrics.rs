//! Decoding, calibration and rejection metrics, and their study-level summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};

pub const ECE_BINS: usize = 10;
/// Baseline-BA boundary for the low/high win-rate strata.
pub const LOW_BASELINE_BA: f64 = 0.6;
/// Floor applied when reporting `1/ECE`.
pub const ECE_FLOOR: f64 = 1e-6;

fn check_pair(y_true: &[u32], y_pred_len: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(FaarError::EmptyInput("no samples to score".into()));
    }
    if y_true.len() != y_pred_len {
        return Err(FaarError::ShapeMismatch(format!("{} labels vs {} predictions", y_true.len(), y_pred_len)));
    }
    Ok(())
}

/// Mean per-class recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    check_pair(y_true, y_pred.len())?;
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = counts.entry(*t).or_default();
        e.0 += 1;
        e.1 += usize::from(t == p);
    }
    Ok(counts.values().map(|(n, hit)| *hit as f64 / *n as f64).sum::<f64>() / counts.len() as f64)
}

/// `(f1, precision)` for `positive`; zero denominators give 0.
pub fn f1_precision(y_true: &[u32], y_pred: &[u32], positive: u32) -> Result<(f64, f64)> {
    check_pair(y_true, y_pred.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (t, p) in y_true.iter().zip(y_pred) {
        match (*t == positive, *p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok((f1, precision))
}

/// Binary expected calibration error. `proba[i]` is the probability of
/// `positive`; confidence `max(p, 1−p)` is binned into `n_bins` equal bins on `[0.5, 1]`.
pub fn ece(y_true: &[u32], proba: &[f64], positive: u32, n_bins: usize) -> Result<f64> {
    check_pair(y_true, proba.len())?;
    if n_bins == 0 {
        return Err(FaarError::BadConfig("ECE needs at least one bin".into()));
    }
    if proba.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(FaarError::BadConfig("probabilities must lie in [0, 1]".into()));
    }
    let mut bins = vec![(0usize, 0usize, 0.0f64); n_bins];
    for (t, p) in y_true.iter().zip(proba) {
        let predicted_positive = *p >= 0.5;
        let conf = if predicted_positive { *p } else { 1.0 - p };
        let b = (((conf - 0.5) * 2.0 * n_bins as f64) as usize).min(n_bins - 1);
        bins[b].0 += 1;
        bins[b].1 += usize::from(predicted_positive == (*t == positive));
        bins[b].2 += conf;
    }
    let n = y_true.len() as f64;
    Ok(bins
        .iter()
        .filter(|b| b.0 > 0)
        .map(|(_, correct, conf)| (*correct as f64 - conf).abs() / n)
        .sum())
}

fn check_subjects(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<()> {
    if a.is_empty() {
        return Err(FaarError::EmptyInput("no subjects".into()));
    }
    if !a.keys().eq(b.keys()) {
        return Err(FaarError::SubjectMismatch(format!(
            "{:?} vs {:?}",
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Fraction of subjects whose BA strictly exceeds the baseline's.
pub fn win_rate(method: &BTreeMap<String, f64>, baseline: &BTreeMap<String, f64>) -> Result<f64> {
    check_subjects(method, baseline)?;
    let wins = method.iter().filter(|(s, m)| **m > baseline[*s]).count();
    Ok(wins as f64 / method.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateBands {
    /// Subjects with baseline BA below [`LOW_BASELINE_BA`]; `None` if there are none.
    pub low: Option<f64>,
    pub high: Option<f64>,
}

pub fn stratified_win_rate(method: &BTreeMap<String, f64>, baseline: &BTreeMap<String, f64>) -> Result<WinRateBands> {
    check_subjects(method, baseline)?;
    let band = |low: bool| {
        let subjects: Vec<&String> = baseline.iter().filter(|(_, b)| (**b < LOW_BASELINE_BA) == low).map(|(s, _)| s).collect();
        (!subjects.is_empty())
            .then(|| subjects.iter().filter(|s| method[**s] > baseline[**s]).count() as f64 / subjects.len() as f64)
    };
    Ok(WinRateBands { low: band(true), high: band(false) })
}

/// Population standard deviation of subject-level BAs.
pub fn inter_subject_std(per_subject_ba: &[f64]) -> Result<f64> {
    let n = per_subject_ba.len();
    if n < 2 {
        return Err(FaarError::TooFewSubjects { need: 2, got: n });
    }
    let mean = per_subject_ba.iter().sum::<f64>() / n as f64;
    Ok((per_subject_ba.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt())
}

/// Processing seconds per second of signal.
pub fn real_time_factor(wall_seconds: f64, eeg_seconds: f64) -> Result<f64> {
    if !(eeg_seconds > 0.0) {
        return Err(FaarError::BadConfig(format!("signal duration {eeg_seconds} must be > 0")));
    }
    Ok(wall_seconds / eeg_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_id: usize,
    pub subject_id: String,
    /// Session or subject held out in this fold.
    pub held_out: String,
    /// `None` when rejection emptied the training or test set.
    pub balanced_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub ece: Option<f64>,
    pub rejection_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_rejected_train: usize,
    pub n_rejected_test: usize,
    pub all_rejected: bool,
}

impl FoldMetrics {
    pub fn is_scored(&self) -> bool {
        self.balanced_accuracy.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: String,
    pub method: String,
    pub balanced_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub ece: Option<f64>,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_balanced_accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_ece: Option<f64>,
    pub inverse_ece: Option<f64>,
    pub mean_rejection_rate: f64,
    pub inter_subject_std_ba: Option<f64>,
    pub win_rate: Option<f64>,
    pub win_rate_bands: Option<WinRateBands>,
    pub flagged_folds: usize,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scheme: String,
    pub baseline: String,
    pub methods: Vec<MethodSummary>,
    /// Only present when timing was requested; wall-clock values are not reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_time_factor: Option<BTreeMap<String, f64>>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Subject-level means across that subject's scored folds.
pub fn per_subject(method: &str, folds: &[FoldMetrics]) -> Vec<SubjectRow> {
    let mut by: BTreeMap<&str, Vec<&FoldMetrics>> = BTreeMap::new();
    for f in folds {
        by.entry(f.subject_id.as_str()).or_default().push(f);
    }
    by.into_iter()
        .map(|(s, fs)| SubjectRow {
            subject: s.to_string(),
            method: method.to_string(),
            balanced_accuracy: mean_of(fs.iter().map(|f| f.balanced_accuracy)),
            f1: mean_of(fs.iter().map(|f| f.f1)),
            precision: mean_of(fs.iter().map(|f| f.precision)),
            ece: mean_of(fs.iter().map(|f| f.ece)),
            rejection_rate: fs.iter().map(|f| f.rejection_rate).sum::<f64>() / fs.len() as f64,
        })
        .collect()
}

fn ba_map(rows: &[SubjectRow]) -> BTreeMap<String, f64> {
    rows.iter().filter_map(|r| r.balanced_accuracy.map(|b| (r.subject.clone(), b))).collect()
}

/// Aggregates per-method fold results. Win rates compare each method with
/// `baseline` over the subjects scored under both.
pub fn summarize(scheme: &str, baseline: &str, results: &[(String, Vec<FoldMetrics>)]) -> Result<StudySummary> {
    let base = results
        .iter()
        .find(|(m, _)| m == baseline)
        .map(|(m, f)| ba_map(&per_subject(m, f)));
    let methods = results
        .iter()
        .map(|(name, folds)| {
            let rows = per_subject(name, folds);
            let bas = ba_map(&rows);
            let (win, bands) = match &base {
                Some(b) if name != baseline => {
                    let common: BTreeMap<String, f64> = bas.iter().filter(|(s, _)| b.contains_key(*s)).map(|(s, v)| (s.clone(), *v)).collect();
                    let b_common: BTreeMap<String, f64> = b.iter().filter(|(s, _)| common.contains_key(*s)).map(|(s, v)| (s.clone(), *v)).collect();
                    if common.is_empty() {
                        (None, None)
                    } else {
                        (Some(win_rate(&common, &b_common)?), Some(stratified_win_rate(&common, &b_common)?))
                    }
                }
                _ => (None, None),
            };
            let ba: Vec<f64> = bas.values().copied().collect();
            let mean_ece = mean_of(folds.iter().map(|f| f.ece));
            Ok(MethodSummary {
                method: name.clone(),
                mean_balanced_accuracy: mean_of(folds.iter().map(|f| f.balanced_accuracy)),
                mean_f1: mean_of(folds.iter().map(|f| f.f1)),
                mean_precision: mean_of(folds.iter().map(|f| f.precision)),
                mean_ece,
                inverse_ece: mean_ece.map(|e| 1.0 / e.max(ECE_FLOOR)),
                mean_rejection_rate: if folds.is_empty() {
                    0.0
                } else {
                    folds.iter().map(|f| f.rejection_rate).sum::<f64>() / folds.len() as f64
                },
                inter_subject_std_ba: inter_subject_std(&ba).ok(),
                win_rate: win,
                win_rate_bands: bands,
                flagged_folds: folds.iter().filter(|f| f.all_rejected).count(),
                folds: folds.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudySummary { scheme: scheme.to_string(), baseline: baseline.to_string(), methods, real_time_factor: None })
}

impl StudySummary {
    /// Per-subject, per-method CSV table.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for m in &self.methods {
            for row in per_subject(&m.method, &m.folds) {
                out.serialize(row).map_err(|e| FaarError::Io(std::io::Error::other(e)))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
