//! End-to-end FAAR: self-calibrated reference, SQI scoring, knee threshold.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::knee::{reject, select_threshold, DEFAULT_SENSITIVITY};
use crate::model::{EpochTensor, RejectionDecision};
use crate::reference::{calibrate_epochs, CalibrationConfig, CleanWindowSelection, ReferenceModel};
use crate::sqi::{score_epochs, SqiReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaarConfig {
    pub calibration: CalibrationConfig,
    pub sensitivity: f64,
}

impl Default for FaarConfig {
    fn default() -> Self {
        Self { calibration: CalibrationConfig::default(), sensitivity: DEFAULT_SENSITIVITY }
    }
}

/// A reference and threshold learned on one batch, applicable to others.
#[derive(Debug, Clone)]
pub struct FaarRejector {
    pub model: ReferenceModel,
    pub threshold: f64,
    pub selection: CleanWindowSelection,
}

/// Everything produced when FAAR is fitted on a batch and applied to it.
#[derive(Debug, Clone)]
pub struct FaarOutcome {
    pub rejector: FaarRejector,
    pub reports: Vec<SqiReport>,
    pub decisions: Vec<RejectionDecision>,
}

impl FaarRejector {
    pub fn fit(e: &EpochTensor, cfg: &FaarConfig) -> Result<Self> {
        Ok(faar_reject(e, cfg)?.rejector)
    }

    pub fn from_parts(model: ReferenceModel, threshold: f64, selection: CleanWindowSelection) -> Self {
        Self { model, threshold, selection }
    }

    pub fn score(&self, e: &EpochTensor) -> Result<Vec<SqiReport>> {
        score_epochs(e, &self.model, self.model.window_len_s)
    }

    pub fn decide(&self, e: &EpochTensor) -> Result<Vec<RejectionDecision>> {
        Ok(reject(&self.score(e)?, self.threshold))
    }
}

/// Calibrates on `e`, scores it, and thresholds at the knee of its SQIs.
pub fn faar_reject(e: &EpochTensor, cfg: &FaarConfig) -> Result<FaarOutcome> {
    let cal = calibrate_epochs(e, &cfg.calibration)?;
    let reports = score_epochs(e, &cal.model, cfg.calibration.window_len_s)?;
    let sqis: Vec<f64> = reports.iter().map(|r| r.sqi).collect();
    let threshold = select_threshold(&sqis, cfg.sensitivity)?;
    let decisions = reject(&reports, threshold);
    Ok(FaarOutcome { rejector: FaarRejector::from_parts(cal.model, threshold, cal.selection), reports, decisions })
}
