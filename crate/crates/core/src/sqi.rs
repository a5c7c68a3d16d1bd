//! Reference-normalized severities and the epoch-level Signal Quality Index.

use ndarray::{Array3, Axis};
use serde::Serialize;

use crate::error::{FaarError, Result};
use crate::features::FeatureExtractor;
use crate::model::{EpochTensor, WindowGrid, FEATURE_COUNT};
use crate::reference::ReferenceModel;

pub const MAX_SEVERITY: u8 = 3;

/// Ordinal grade of one z-score: `|z| ≤ 2 → 0`, `≤ 4 → 1`, `≤ 6 → 2`,
/// otherwise (or non-finite) `3`.
pub fn severity(z: f64) -> u8 {
    let a = z.abs();
    if !a.is_finite() {
        MAX_SEVERITY
    } else if a <= 2.0 {
        0
    } else if a <= 4.0 {
        1
    } else if a <= 6.0 {
        2
    } else {
        3
    }
}

/// `[windows × channels × features]`, entries in `0..=3`.
pub type SeverityCube = Array3<u8>;

#[derive(Debug, Clone, PartialEq)]
pub struct SqiReport {
    pub epoch_id: u64,
    pub sqi: f64,
    pub severity: SeverityCube,
    pub worst_channel: usize,
}

/// JSONL line for a scored epoch.
#[derive(Debug, Clone, Serialize)]
pub struct SqiRecord {
    pub epoch_id: u64,
    pub sqi: f64,
    pub worst_channel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<bool>,
}

impl SqiReport {
    pub fn record(&self, rejected: Option<bool>) -> SqiRecord {
        SqiRecord { epoch_id: self.epoch_id, sqi: self.sqi, worst_channel: self.worst_channel, rejected }
    }

    /// True when every channel/feature of every window is within reference.
    pub fn all_within_reference(&self) -> bool {
        self.severity.iter().all(|s| *s == 0)
    }
}

fn check_model(grid: &WindowGrid, m: &ReferenceModel) -> Result<()> {
    if grid.n_channels() != m.n_channels() {
        return Err(FaarError::ModelMismatch(format!(
            "grid has {} channels, model {}",
            grid.n_channels(),
            m.n_channels()
        )));
    }
    if grid.values.len_of(Axis(2)) != FEATURE_COUNT || m.feature_names.len() != FEATURE_COUNT {
        return Err(FaarError::ModelMismatch("feature counts differ".into()));
    }
    if (grid.window_len_s - m.window_len_s).abs() > 1e-9 {
        return Err(FaarError::ModelMismatch(format!(
            "grid windows are {} s, model windows {} s",
            grid.window_len_s, m.window_len_s
        )));
    }
    Ok(())
}

pub fn severity_cube(grid: &WindowGrid, m: &ReferenceModel) -> Result<SeverityCube> {
    check_model(grid, m)?;
    let (w, c, f) = grid.values.dim();
    Ok(Array3::from_shape_fn((w, c, f), |(wi, ci, fi)| {
        let z = (grid.values[[wi, ci, fi]] - m.mean[ci][fi]) / m.std[ci][fi];
        if z.is_nan() { MAX_SEVERITY } else { severity(z) }
    }))
}

/// Mean over (window, channel) of the worst feature severity.
pub fn epoch_sqi(epoch_id: u64, grid: &WindowGrid, m: &ReferenceModel) -> Result<SqiReport> {
    let severity = severity_cube(grid, m)?;
    let (windows, channels, _) = severity.dim();
    let mut channel_sum = vec![0u32; channels];
    let mut total = 0u64;
    for wi in 0..windows {
        for (ci, acc) in channel_sum.iter_mut().enumerate() {
            let cell = severity.slice(ndarray::s![wi, ci, ..]).iter().copied().max().unwrap_or(0);
            *acc += cell as u32;
            total += cell as u64;
        }
    }
    // integer accumulation keeps the result independent of summation order
    let sqi = total as f64 / (windows * channels) as f64;
    let mut worst_channel = 0;
    for (ci, s) in channel_sum.iter().enumerate() {
        if *s > channel_sum[worst_channel] {
            worst_channel = ci;
        }
    }
    Ok(SqiReport { epoch_id, sqi, severity, worst_channel })
}

/// Scores every epoch, preserving order.
pub fn score_epochs(e: &EpochTensor, m: &ReferenceModel, window_len_s: f64) -> Result<Vec<SqiReport>> {
    if e.n_channels() != m.n_channels() {
        return Err(FaarError::ModelMismatch(format!(
            "epochs have {} channels, model {}",
            e.n_channels(),
            m.n_channels()
        )));
    }
    let fx = FeatureExtractor::new(e.fs, window_len_s)?;
    e.data
        .axis_iter(Axis(0))
        .zip(&e.epoch_ids)
        .map(|(ep, id)| epoch_sqi(*id, &fx.grid(ep)?, m))
        .collect()
}
