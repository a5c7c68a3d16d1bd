use ndarray::Axis;

use crate::error::{FaarError, Result};
use crate::model::{EpochTensor, Method, RejectionDecision};

pub const DEFAULT_P2P_UV: f64 = 100.0;

/// Largest per-channel `max − min` of each epoch.
pub fn peak_to_peak(e: &EpochTensor) -> Vec<f64> {
    e.data
        .axis_iter(Axis(0))
        .map(|ep| {
            ep.outer_iter()
                .map(|ch| {
                    let (lo, hi) = ch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
                    hi - lo
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Rejects epochs whose peak-to-peak amplitude on any channel exceeds `threshold_uv`.
pub fn p2p_reject(e: &EpochTensor, threshold_uv: f64) -> Result<Vec<RejectionDecision>> {
    if !(threshold_uv > 0.0) {
        return Err(FaarError::BadConfig(format!("peak-to-peak threshold {threshold_uv} must be > 0")));
    }
    Ok(peak_to_peak(e)
        .into_iter()
        .zip(&e.epoch_ids)
        .map(|(p, id)| RejectionDecision {
            epoch_id: *id,
            sqi: p,
            threshold: threshold_uv,
            rejected: p > threshold_uv,
            method: Method::P2p,
        })
        .collect())
}
