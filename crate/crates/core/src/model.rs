//! Shared domain types: continuous recordings, epoch batches, feature grids
//! and rejection verdicts.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FaarError, Result};

/// A continuous multichannel recording in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// `[channels × samples]`
    pub data: Array2<f64>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub subject_id: String,
    pub session_id: String,
}

impl Recording {
    pub fn new(
        data: Array2<f64>,
        fs: f64,
        channel_names: Vec<String>,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        let r = Self {
            data,
            fs,
            channel_names,
            subject_id: subject_id.into(),
            session_id: session_id.into(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(FaarError::BadConfig(format!("sampling rate {} must be > 0", self.fs)));
        }
        let (c, t) = self.data.dim();
        if c == 0 || t == 0 {
            return Err(FaarError::EmptyInput(format!("recording has shape {c}×{t}")));
        }
        if self.channel_names.len() != c {
            return Err(FaarError::ShapeMismatch(format!(
                "{} channel names for {c} channels",
                self.channel_names.len()
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(FaarError::NonFinite(format!("sample {} (channel {})", pos % t, pos / t)));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    /// Cuts consecutive non-overlapping epochs of `epoch_s` seconds starting at
    /// `offset_s`. A trailing remainder shorter than one epoch is dropped.
    pub fn epochs(&self, offset_s: f64, epoch_s: f64) -> Result<EpochTensor> {
        let len = (epoch_s * self.fs).round() as usize;
        let start = (offset_s * self.fs).round() as usize;
        if len == 0 {
            return Err(FaarError::BadConfig("epoch length rounds to zero samples".into()));
        }
        let avail = self.n_samples().saturating_sub(start);
        let n = avail / len;
        let c = self.n_channels();
        let mut data = Array3::zeros((n, c, len));
        for e in 0..n {
            let s = start + e * len;
            data.index_axis_mut(Axis(0), e)
                .assign(&self.data.slice(ndarray::s![.., s..s + len]));
        }
        EpochTensor::new(data, self.fs, self.channel_names.clone())
            .map(|t| t.with_tags(&self.subject_id, &self.session_id))
    }
}

/// A batch of fixed-length epochs `[epochs × channels × samples]` in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub data: Array3<f64>,
    pub fs: f64,
    pub labels: Option<Vec<u32>>,
    pub epoch_ids: Vec<u64>,
    pub channel_names: Vec<String>,
    /// Per-epoch subject tag, used by cross-subject folds.
    pub subject_ids: Vec<String>,
    /// Per-epoch session tag, used by cross-session folds.
    pub session_ids: Vec<String>,
}

impl EpochTensor {
    /// Builds a tensor with sequential epoch ids and default subject/session tags.
    pub fn new(data: Array3<f64>, fs: f64, channel_names: Vec<String>) -> Result<Self> {
        let n = data.len_of(Axis(0));
        let t = Self {
            data,
            fs,
            labels: None,
            epoch_ids: (0..n as u64).collect(),
            channel_names,
            subject_ids: vec!["S0".to_string(); n],
            session_ids: vec!["0".to_string(); n],
        };
        validate_epochs(t)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.labels = Some(labels);
        validate_epochs(self)
    }

    pub fn with_tags(mut self, subject: &str, session: &str) -> Self {
        let n = self.n_epochs();
        self.subject_ids = vec![subject.to_string(); n];
        self.session_ids = vec![session.to_string(); n];
        self
    }

    pub fn with_epoch_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        self.epoch_ids = ids;
        validate_epochs(self)
    }

    pub fn n_epochs(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn n_channels(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn n_samples(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn epoch_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn epoch(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    /// Sub-batch of the given epoch positions, in the given order.
    pub fn select(&self, idx: &[usize]) -> EpochTensor {
        EpochTensor {
            data: self.data.select(Axis(0), idx),
            fs: self.fs,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            epoch_ids: idx.iter().map(|&i| self.epoch_ids[i]).collect(),
            channel_names: self.channel_names.clone(),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            session_ids: idx.iter().map(|&i| self.session_ids[i].clone()).collect(),
        }
    }

    /// Stacks batches that share geometry. Epoch ids must stay unique.
    pub fn concat(parts: &[EpochTensor]) -> Result<EpochTensor> {
        let first = parts
            .first()
            .ok_or_else(|| FaarError::EmptyInput("no tensors to concatenate".into()))?;
        for p in parts {
            if p.fs != first.fs
                || p.n_channels() != first.n_channels()
                || p.n_samples() != first.n_samples()
            {
                return Err(FaarError::ShapeMismatch("tensors differ in geometry".into()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| FaarError::ShapeMismatch(e.to_string()))?;
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            Some(parts.iter().flat_map(|p| p.labels.clone().unwrap()).collect())
        } else {
            None
        };
        let t = EpochTensor {
            data,
            fs: first.fs,
            labels,
            epoch_ids: parts.iter().flat_map(|p| p.epoch_ids.iter().copied()).collect(),
            channel_names: first.channel_names.clone(),
            subject_ids: parts.iter().flat_map(|p| p.subject_ids.iter().cloned()).collect(),
            session_ids: parts.iter().flat_map(|p| p.session_ids.iter().cloned()).collect(),
        };
        validate_epochs(t)
    }
}

/// Checks the tensor invariants and hands the tensor back untouched.
pub fn validate_epochs(e: EpochTensor) -> Result<EpochTensor> {
    let (n, c, t) = e.data.dim();
    if n == 0 {
        return Err(FaarError::EmptyInput("tensor has 0 epochs".into()));
    }
    if c == 0 || t == 0 {
        return Err(FaarError::ShapeMismatch(format!("epochs have shape {c}×{t}")));
    }
    if !(e.fs > 0.0 && e.fs.is_finite()) {
        return Err(FaarError::BadConfig(format!("sampling rate {} must be > 0", e.fs)));
    }
    if e.channel_names.len() != c {
        return Err(FaarError::ShapeMismatch(format!(
            "{} channel names for {c} channels",
            e.channel_names.len()
        )));
    }
    if e.epoch_ids.len() != n || e.subject_ids.len() != n || e.session_ids.len() != n {
        return Err(FaarError::ShapeMismatch("per-epoch metadata length differs from epoch count".into()));
    }
    if let Some(l) = &e.labels {
        if l.len() != n {
            return Err(FaarError::ShapeMismatch(format!("{} labels for {n} epochs", l.len())));
        }
    }
    let mut seen = HashSet::with_capacity(n);
    if !e.epoch_ids.iter().all(|id| seen.insert(*id)) {
        return Err(FaarError::ShapeMismatch("epoch ids are not unique".into()));
    }
    if let Some(pos) = e.data.iter().position(|v| !v.is_finite()) {
        let per_epoch = c * t;
        return Err(FaarError::NonFinite(format!(
            "epoch {}, channel {}, sample {}",
            pos / per_epoch,
            (pos % per_epoch) / t,
            pos % t
        )));
    }
    Ok(e)
}

/// Generates names `ch0`, `ch1`, ...
pub fn default_channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch{i}")).collect()
}

pub const FEATURE_COUNT: usize = 5;

/// Canonical feature order used by every grid and reference model.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["band_mag", "rms", "max_grad", "zcr", "kurt"];

/// Per-window features `[windows × channels × features]` for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGrid {
    pub values: Array3<f64>,
    pub window_len_s: f64,
    pub feature_names: Vec<String>,
}

impl WindowGrid {
    pub fn n_windows(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn n_channels(&self) -> usize {
        self.values.len_of(Axis(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Faar,
    P2p,
    Iforest,
    /// Decisions supplied by a third-party rejector.
    External,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Faar => "FAAR",
            Method::P2p => "P2P",
            Method::Iforest => "IFOREST",
            Method::External => "EXTERNAL",
        })
    }
}

/// Keep/reject verdict for one epoch. `sqi` carries the method's own score
/// (SQI for FAAR, peak-to-peak µV for P2P, anomaly score for IFOREST).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionDecision {
    pub epoch_id: u64,
    pub sqi: f64,
    /// `+∞` means "reject nothing"; written as JSON `null`.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub rejected: bool,
    pub method: Method,
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}
