//! Self-calibration: choose clean windows from the recording itself by a
//! truncated-Gaussian inlier test on standardized window RMS, fit per-channel
//! feature statistics on them, and keep those statistics current online with
//! exponential forgetting.

use std::sync::{Arc, RwLock};

use ndarray::{Array2, ArrayView2, Axis, s};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{FaarError, Result};
use crate::features::{self, FeatureExtractor};
use crate::model::{EpochTensor, Recording, WindowGrid, FEATURE_COUNT, FEATURE_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Central probability mass kept for the truncated fit.
    pub trunc_q: f64,
    pub z_max: f64,
    pub max_bad_frac: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self { trunc_q: 0.8, z_max: 3.0, max_bad_frac: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStage {
    Strict,
    RelaxedZ,
    RelaxedZAndBadFrac,
    LowestDeviation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanWindowSelection {
    pub selected: Vec<usize>,
    pub rms_z: Array2<f64>,
    pub bad_channel_frac: Vec<f64>,
    pub stage: SelectionStage,
}

/// Per-channel z-scores of a `[windows × channels]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ZGrid {
    pub z: Array2<f64>,
    /// Channels whose values never vary; every cell of them counts as bad.
    pub degenerate: Vec<bool>,
}

/// RMS per channel over consecutive non-overlapping windows.
pub fn rms_grid(r: &Recording, window_len_s: f64) -> Result<Array2<f64>> {
    let w = features::window_samples(r.fs, window_len_s)?;
    block_rms_grid(r.data.view(), w)
}

fn block_rms_grid(block: ArrayView2<'_, f64>, w: usize) -> Result<Array2<f64>> {
    let (channels, samples) = block.dim();
    let n = samples / w;
    if n == 0 {
        return Err(FaarError::WindowTooShort { samples, need: w });
    }
    Ok(Array2::from_shape_fn((n, channels), |(win, c)| {
        let seg = block.slice(s![c, win * w..(win + 1) * w]);
        (seg.iter().map(|v| v * v).sum::<f64>() / w as f64).sqrt()
    }))
}

pub fn standardize_per_channel(grid: &Array2<f64>) -> Result<ZGrid> {
    let (windows, channels) = grid.dim();
    if windows < 2 {
        return Err(FaarError::TooFewWindows { need: 2, got: windows });
    }
    let mut z = Array2::zeros((windows, channels));
    let mut degenerate = vec![false; channels];
    for c in 0..channels {
        let col = grid.column(c);
        let mean = col.sum() / windows as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / windows as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1e-300) || sd == 0.0 {
            degenerate[c] = true;
            continue;
        }
        for w in 0..windows {
            z[[w, c]] = (grid[[w, c]] - mean) / sd;
        }
    }
    Ok(ZGrid { z, degenerate })
}

/// Deficit factor `sd(truncated) / σ` for a normal cut symmetrically to its
/// central `q` mass.
fn truncation_scale(q: f64) -> f64 {
    let a = std::f64::consts::SQRT_2 * erf_inv(q);
    let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (1.0 - 2.0 * a * pdf / q).sqrt()
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Location and scale of the central `trunc_q` mass, rescaled to the full
/// Gaussian.
pub fn truncated_gaussian_fit(values: &[f64], trunc_q: f64) -> (f64, f64) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - trunc_q) / 2.0;
    let (lo, hi) = (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail));
    let kept: Vec<f64> = sorted.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
    let n = kept.len() as f64;
    let mu = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt() / truncation_scale(trunc_q))
}

/// `max(10, ⌈10 % of windows⌉)`.
pub fn min_reference_windows(n_windows: usize) -> usize {
    10.max(n_windows.div_ceil(10))
}

fn allowed_bad(channels: usize, frac: f64) -> usize {
    1.max((frac * channels as f64 + 1e-9).floor() as usize)
}

struct Deviation {
    dev: Array2<f64>,
    degenerate: Vec<bool>,
}

impl Deviation {
    fn new(zgrid: &ZGrid, trunc_q: f64) -> Self {
        let (windows, channels) = zgrid.z.dim();
        let mut dev = Array2::zeros((windows, channels));
        for c in 0..channels {
            if zgrid.degenerate[c] {
                continue;
            }
            let col: Vec<f64> = zgrid.z.column(c).to_vec();
            let (mu, sigma) = truncated_gaussian_fit(&col, trunc_q);
            let sigma = sigma.max(1e-12);
            for w in 0..windows {
                dev[[w, c]] = (col[w] - mu).abs() / sigma;
            }
        }
        Self { dev, degenerate: zgrid.degenerate.clone() }
    }

    fn bad_counts(&self, z_max: f64) -> Vec<usize> {
        self.dev
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .zip(&self.degenerate)
                    .filter(|(d, deg)| **deg || **d > z_max)
                    .count()
            })
            .collect()
    }
}

/// Picks reference windows. Falls back through: z_max 4, then bad fraction
/// 0.2, then the windows with the smallest summed deviation.
pub fn select_clean_windows(zgrid: &ZGrid, params: &SelectionParams) -> Result<CleanWindowSelection> {
    let (windows, channels) = zgrid.z.dim();
    let need = min_reference_windows(windows);
    if windows < need {
        return Err(FaarError::ReferenceUnavailable(format!(
            "{windows} candidate windows, need at least {need}"
        )));
    }
    let dev = Deviation::new(zgrid, params.trunc_q);
    let ladder = [
        (SelectionStage::Strict, params.z_max, params.max_bad_frac),
        (SelectionStage::RelaxedZ, params.z_max.max(4.0), params.max_bad_frac),
        (SelectionStage::RelaxedZAndBadFrac, params.z_max.max(4.0), params.max_bad_frac.max(0.2)),
    ];
    for (stage, z_max, frac) in ladder {
        let counts = dev.bad_counts(z_max);
        let allowed = allowed_bad(channels, frac);
        let selected: Vec<usize> = (0..windows).filter(|&w| counts[w] <= allowed).collect();
        if selected.len() >= need {
            return Ok(CleanWindowSelection {
                selected,
                rms_z: zgrid.z.clone(),
                bad_channel_frac: counts.iter().map(|&b| b as f64 / channels as f64).collect(),
                stage,
            });
        }
    }
    let sums: Vec<f64> = dev.dev.axis_iter(Axis(0)).map(|r| r.sum()).collect();
    let mut order: Vec<usize> = (0..windows).collect();
    order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order[..need].to_vec();
    selected.sort_unstable();
    let counts = dev.bad_counts(params.z_max);
    Ok(CleanWindowSelection {
        selected,
        rms_z: zgrid.z.clone(),
        bad_channel_frac: counts.iter().map(|&b| b as f64 / channels as f64).collect(),
        stage: SelectionStage::LowestDeviation,
    })
}

/// Per-channel, per-feature location/scale of clean data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub channel_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// `[channels][features]`
    pub mean: Vec<Vec<f64>>,
    /// `[channels][features]`, floored
    pub std: Vec<Vec<f64>>,
    /// Per-feature scale floor used by fitting and online updates.
    pub std_floor: Vec<f64>,
    pub n_windows: usize,
    pub window_len_s: f64,
    /// Forgetting factor λ ∈ (0, 1]; 1 disables forgetting.
    pub forgetting: f64,
}

/// Kurtosis fallback location for a channel that was flat in every
/// reference window (Gaussian value).
const FLAT_CHANNEL_KURT_MEAN: f64 = 3.0;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Fits the reference over `rows`, each a `[channels × features]` slice of one
/// selected window. Population moments; non-finite sentinels are skipped.
pub fn fit_reference_rows(
    rows: &[ArrayView2<'_, f64>],
    channel_names: &[String],
    window_len_s: f64,
    forgetting: f64,
) -> Result<ReferenceModel> {
    if rows.is_empty() {
        return Err(FaarError::ReferenceUnavailable("no selected windows".into()));
    }
    let channels = channel_names.len();
    for r in rows {
        if r.dim() != (channels, FEATURE_COUNT) {
            return Err(FaarError::ModelMismatch(format!(
                "window features have shape {:?}, expected ({channels}, {FEATURE_COUNT})",
                r.dim()
            )));
        }
    }
    let mut mean = vec![vec![0.0; FEATURE_COUNT]; channels];
    let mut raw_std = vec![vec![0.0; FEATURE_COUNT]; channels];
    for c in 0..channels {
        for f in 0..FEATURE_COUNT {
            let vals: Vec<f64> = rows.iter().map(|r| r[[c, f]]).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                mean[c][f] = if f == features::idx::KURT { FLAT_CHANNEL_KURT_MEAN } else { 0.0 };
                raw_std[c][f] = 0.0;
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[c][f] = m;
            raw_std[c][f] = var.sqrt();
        }
    }
    let std_floor: Vec<f64> = (0..FEATURE_COUNT)
        .map(|f| {
            let mut col: Vec<f64> = raw_std.iter().map(|r| r[f]).collect();
            1e-6f64.max(1e-3 * median(&mut col))
        })
        .collect();
    let std = raw_std
        .iter()
        .map(|r| r.iter().zip(&std_floor).map(|(s, fl)| s.max(*fl)).collect())
        .collect();
    Ok(ReferenceModel {
        channel_names: channel_names.to_vec(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        mean,
        std,
        std_floor,
        n_windows: rows.len(),
        window_len_s,
        forgetting,
    })
}

/// Fits the reference on the selected rows of a `[windows × channels × features]` grid.
pub fn fit_reference(
    grid: &WindowGrid,
    selected: &[usize],
    channel_names: &[String],
    forgetting: f64,
) -> Result<ReferenceModel> {
    if let Some(&bad) = selected.iter().find(|&&w| w >= grid.n_windows()) {
        return Err(FaarError::ShapeMismatch(format!("selected window {bad} out of range")));
    }
    let rows: Vec<_> = selected.iter().map(|&w| grid.values.index_axis(Axis(0), w)).collect();
    fit_reference_rows(&rows, channel_names, grid.window_len_s, forgetting)
}

/// One exponentially-forgetting moment step per channel/feature.
pub fn update_reference(m: &ReferenceModel, window: ArrayView2<'_, f64>, lambda: f64) -> ReferenceModel {
    let mut next = m.clone();
    next.n_windows += 1;
    if lambda >= 1.0 {
        return next;
    }
    for (c, (mu_row, sd_row)) in next.mean.iter_mut().zip(next.std.iter_mut()).enumerate() {
        for f in 0..FEATURE_COUNT {
            let x = window[[c, f]];
            if !x.is_finite() {
                continue;
            }
            let mu = mu_row[f];
            let ex2 = sd_row[f] * sd_row[f] + mu * mu;
            let mu_next = lambda * mu + (1.0 - lambda) * x;
            let ex2_next = lambda * ex2 + (1.0 - lambda) * x * x;
            let floor = m.std_floor[f];
            mu_row[f] = mu_next;
            sd_row[f] = (ex2_next - mu_next * mu_next).max(floor * floor).sqrt();
        }
    }
    next
}

impl ReferenceModel {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ReferenceModel = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let c = self.channel_names.len();
        let shape_ok = self.mean.len() == c
            && self.std.len() == c
            && self.mean.iter().chain(&self.std).all(|r| r.len() == FEATURE_COUNT)
            && self.std_floor.len() == FEATURE_COUNT
            && self.feature_names.len() == FEATURE_COUNT;
        if !shape_ok {
            return Err(FaarError::ModelMismatch("reference matrices do not match channel/feature counts".into()));
        }
        let finite = self.mean.iter().chain(&self.std).flatten().all(|v| v.is_finite());
        if !finite || self.std.iter().flatten().any(|v| *v <= 0.0) {
            return Err(FaarError::ModelMismatch("reference statistics must be finite with positive scale".into()));
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(FaarError::BadConfig(format!("forgetting factor {} outside (0, 1]", self.forgetting)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub window_len_s: f64,
    pub selection: SelectionParams,
    pub forgetting: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { window_len_s: features::DEFAULT_WINDOW_S, selection: SelectionParams::default(), forgetting: 0.999 }
    }
}

/// A fitted reference together with the window choice that produced it.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: ReferenceModel,
    pub selection: CleanWindowSelection,
}

fn calibrate_grid(
    rms: &Array2<f64>,
    feats: &WindowGrid,
    channel_names: &[String],
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    let z = standardize_per_channel(rms)?;
    let selection = select_clean_windows(&z, &cfg.selection)?;
    let model = fit_reference(feats, &selection.selected, channel_names, cfg.forgetting)?;
    Ok(Calibration { model, selection })
}

/// Offline self-calibration on a continuous recording.
pub fn calibrate_recording(r: &Recording, cfg: &CalibrationConfig) -> Result<Calibration> {
    let fx = FeatureExtractor::new(r.fs, cfg.window_len_s)?;
    let rms = block_rms_grid(r.data.view(), fx.window_samples())?;
    let feats = fx.grid(r.data.view())?;
    calibrate_grid(&rms, &feats, &r.channel_names, cfg)
}

/// Self-calibration over the windows of an epoch batch, pooled in epoch order.
pub fn calibrate_epochs(e: &EpochTensor, cfg: &CalibrationConfig) -> Result<Calibration> {
    let fx = FeatureExtractor::new(e.fs, cfg.window_len_s)?;
    let grids = e
        .data
        .axis_iter(Axis(0))
        .map(|ep| fx.grid(ep))
        .collect::<Result<Vec<_>>>()?;
    calibrate_from_grids(&grids, &e.channel_names, cfg)
}

/// Same as [`calibrate_epochs`] for precomputed per-epoch grids.
pub fn calibrate_from_grids(grids: &[WindowGrid], channel_names: &[String], cfg: &CalibrationConfig) -> Result<Calibration> {
    let Some(first) = grids.first() else {
        return Err(FaarError::EmptyInput("no epochs to calibrate on".into()));
    };
    let views: Vec<_> = grids.iter().map(|g| g.values.view()).collect();
    let values = ndarray::concatenate(Axis(0), &views).map_err(|e| FaarError::ShapeMismatch(e.to_string()))?;
    let rms = values.index_axis(Axis(2), features::idx::RMS).to_owned();
    let pooled = WindowGrid { values, window_len_s: first.window_len_s, feature_names: first.feature_names.clone() };
    calibrate_grid(&rms, &pooled, channel_names, cfg)
}

/// Single-writer handle whose readers always see a complete model.
#[derive(Debug)]
pub struct ReferenceHandle {
    current: RwLock<Arc<ReferenceModel>>,
}

impl ReferenceHandle {
    pub fn new(model: ReferenceModel) -> Self {
        Self { current: RwLock::new(Arc::new(model)) }
    }

    pub fn snapshot(&self) -> Arc<ReferenceModel> {
        self.current.read().expect("reference lock poisoned").clone()
    }

    /// Builds the next model off to the side, then swaps the pointer.
    pub fn update(&self, window: ArrayView2<'_, f64>, lambda: f64) {
        let next = Arc::new(update_reference(&self.snapshot(), window, lambda));
        *self.current.write().expect("reference lock poisoned") = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn truncation_scale_matches_closed_form() {
        // a = 1.2816, φ(a) = 0.17550 → 1 − 2aφ/0.8 = 0.43768
        assert!((truncation_scale(0.8).powi(2) - 0.4377).abs() < 1e-3);
    }

    #[test]
    fn z_scores_have_unit_moments() {
        let grid = Array2::from_shape_fn((30, 4), |(w, c)| ((w * 7 + c * 3) as f64).sin() * (c + 1) as f64 + 5.0);
        let z = standardize_per_channel(&grid).unwrap();
        for c in 0..4 {
            let col = z.z.column(c);
            let m = col.sum() / 30.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 30.0).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outlier_window_has_max_z_and_flat_channel_is_degenerate() {
        let mut grid = Array2::from_elem((5, 2), 1.0);
        grid[[4, 0]] = 100.0;
        let z = standardize_per_channel(&grid).unwrap();
        let col = z.z.column(0);
        assert!((0..4).all(|w| col[w] < col[4]));
        assert_eq!(z.degenerate, vec![false, true]);
        assert!(matches!(standardize_per_channel(&Array2::zeros((1, 2))), Err(FaarError::TooFewWindows { .. })));
    }

    #[test]
    fn fit_two_windows_hand_case() {
        let mut values = Array3::zeros((2, 1, FEATURE_COUNT));
        for f in 0..FEATURE_COUNT {
            values[[0, 0, f]] = 4.0;
            values[[1, 0, f]] = 6.0;
        }
        let grid = WindowGrid { values, window_len_s: 1.0, feature_names: vec![] };
        let m = fit_reference(&grid, &[0, 1], &["a".into()], 1.0).unwrap();
        assert!(m.mean[0].iter().all(|v| *v == 5.0));
        assert!(m.std[0].iter().all(|v| *v == 1.0));
    }

    #[test]
    fn identical_windows_hit_floor() {
        let values = Array3::from_elem((6, 3, FEATURE_COUNT), 2.5);
        let grid = WindowGrid { values, window_len_s: 1.0, feature_names: vec![] };
        let names: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let m = fit_reference(&grid, &[0, 1, 2, 3, 4, 5], &names, 1.0).unwrap();
        assert!(m.std.iter().flatten().all(|v| *v == 1e-6));
        assert!(fit_reference(&grid, &[], &names, 1.0).is_err());
    }

    #[test]
    fn forgetting_identity_and_convergence() {
        let values = Array3::from_shape_fn((4, 2, FEATURE_COUNT), |(w, c, f)| (w + c + f) as f64);
        let grid = WindowGrid { values, window_len_s: 1.0, feature_names: vec![] };
        let names = vec!["a".to_string(), "b".to_string()];
        let m0 = fit_reference(&grid, &[0, 1, 2, 3], &names, 0.9).unwrap();
        let x = Array2::from_elem((2, FEATURE_COUNT), 10.0);
        let same = update_reference(&m0, x.view(), 1.0);
        assert_eq!(same.mean, m0.mean);
        assert_eq!(same.std, m0.std);
        let mut m = m0.clone();
        for _ in 0..100 {
            m = update_reference(&m, x.view(), 0.9);
        }
        for c in 0..2 {
            for f in 0..FEATURE_COUNT {
                let bound = 0.9f64.powi(100) * (m0.mean[c][f] - 10.0).abs();
                assert!((m.mean[c][f] - 10.0).abs() <= bound + 1e-12);
            }
        }
        assert_eq!(m.n_windows, m0.n_windows + 100);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let values = Array3::from_shape_fn((3, 2, FEATURE_COUNT), |(w, c, f)| (w * 2 + c + f) as f64);
        let grid = WindowGrid { values, window_len_s: 1.0, feature_names: vec![] };
        let m = fit_reference(&grid, &[0, 1, 2], &["a".into(), "b".into()], 0.999).unwrap();
        let back = ReferenceModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut broken = m.clone();
        broken.std[0].pop();
        assert!(ReferenceModel::from_json(&serde_json::to_string(&broken).unwrap()).is_err());
    }

    #[test]
    fn snapshot_is_stable_across_update() {
        let values = Array3::from_shape_fn((3, 1, FEATURE_COUNT), |(w, _, f)| (w + f) as f64);
        let grid = WindowGrid { values, window_len_s: 1.0, feature_names: vec![] };
        let m = fit_reference(&grid, &[0, 1, 2], &["a".into()], 0.5).unwrap();
        let handle = ReferenceHandle::new(m.clone());
        let before = handle.snapshot();
        handle.update(Array2::from_elem((1, FEATURE_COUNT), 50.0).view(), 0.5);
        assert_eq!(*before, m);
        assert_ne!(handle.snapshot().mean, m.mean);
    }

    #[test]
    fn too_few_candidates_is_unavailable() {
        let z = standardize_per_channel(&Array2::from_shape_fn((6, 2), |(w, c)| (w * (c + 1)) as f64)).unwrap();
        assert!(matches!(select_clean_windows(&z, &SelectionParams::default()), Err(FaarError::ReferenceUnavailable(_))));
    }
}
