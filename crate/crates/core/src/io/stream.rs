//! Headerless window frames after a one-line JSON handshake, and the
//! incremental scorer that turns them into per-epoch decisions.

use std::io::{BufRead, ErrorKind, Read, Write};
use std::sync::Arc;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use crate::features::FeatureExtractor;
use crate::knee::{SlidingThreshold, DEFAULT_SENSITIVITY};
use crate::model::{default_channel_names, Method, Recording, RejectionDecision};
use crate::reference::{calibrate_recording, CalibrationConfig, ReferenceHandle, ReferenceModel, SelectionParams};
use crate::sqi::epoch_sqi;

pub const DEFAULT_WARMUP_S: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 0.999;
pub const DEFAULT_BUFFER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub fs: f64,
    pub channels: usize,
    pub window_len_s: f64,
    pub epoch_len_s: f64,
}

impl Handshake {
    pub fn window_samples(&self) -> Result<usize> {
        crate::features::window_samples(self.fs, self.window_len_s)
    }

    /// Epoch length in whole windows.
    pub fn windows_per_epoch(&self) -> Result<usize> {
        let k = self.epoch_len_s / self.window_len_s;
        let r = k.round();
        if !(r >= 1.0 && (k - r).abs() < 1e-9) {
            return Err(FaarError::BadConfig(format!(
                "epoch length {} s is not a whole number of {} s windows",
                self.epoch_len_s, self.window_len_s
            )));
        }
        Ok(r as usize)
    }

    pub fn frame_bytes(&self) -> Result<usize> {
        Ok(self.channels * self.window_samples()? * 4)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) || self.channels == 0 {
            return Err(FaarError::BadConfig("handshake needs fs > 0 and at least one channel".into()));
        }
        self.windows_per_epoch()?;
        self.frame_bytes()?;
        Ok(())
    }
}

pub fn read_handshake(r: &mut impl BufRead) -> Result<Handshake> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(FaarError::EmptyInput("stream ended before the handshake".into()));
    }
    let hs: Handshake =
        serde_json::from_str(line.trim()).map_err(|e| FaarError::HeaderMismatch(format!("handshake: {e}")))?;
    hs.validate()?;
    Ok(hs)
}

pub fn write_handshake(w: &mut impl Write, hs: &Handshake) -> Result<()> {
    serde_json::to_writer(&mut *w, hs)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Reads one frame as `[channels × window_samples]`; `None` at a clean end of stream.
pub fn read_frame(r: &mut impl Read, hs: &Handshake) -> Result<Option<Array2<f64>>> {
    let expected = hs.frame_bytes()?;
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let frame_len = u32::from_le_bytes(len) as usize;
    if frame_len != expected {
        return Err(FaarError::HeaderMismatch(format!("frame of {frame_len} bytes, handshake implies {expected}")));
    }
    let mut buf = vec![0u8; expected];
    let mut got = 0;
    while got < expected {
        match r.read(&mut buf[got..])? {
            0 => return Err(FaarError::TruncatedPayload { expected, got }),
            k => got += k,
        }
    }
    let values: Vec<f64> =
        buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite(format!("frame sample {i}")));
    }
    let shape = (hs.channels, hs.window_samples()?);
    Array2::from_shape_vec(shape, values).map(Some).map_err(|e| FaarError::ShapeMismatch(e.to_string()))
}

pub fn write_frame(w: &mut impl Write, window: ArrayView2<'_, f64>) -> Result<()> {
    let len = u32::try_from(window.len() * 4).map_err(|_| FaarError::BadConfig("frame too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    for v in window.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Handshake followed by every complete window of `r`; a trailing partial window is dropped.
pub fn encode_recording(r: &Recording, window_len_s: f64, epoch_len_s: f64) -> Result<Vec<u8>> {
    let hs = Handshake { fs: r.fs, channels: r.n_channels(), window_len_s, epoch_len_s };
    hs.validate()?;
    let w = hs.window_samples()?;
    let mut out = Vec::with_capacity(64 + r.data.len() * 4);
    write_handshake(&mut out, &hs)?;
    for k in 0..r.n_samples() / w {
        write_frame(&mut out, r.data.slice(ndarray::s![.., k * w..(k + 1) * w]))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub warmup_s: f64,
    pub lambda: f64,
    pub buffer: usize,
    pub sensitivity: f64,
    pub selection: SelectionParams,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            warmup_s: DEFAULT_WARMUP_S,
            lambda: DEFAULT_LAMBDA,
            buffer: DEFAULT_BUFFER,
            sensitivity: DEFAULT_SENSITIVITY,
            selection: SelectionParams::default(),
        }
    }
}

/// Single-writer streaming state. Warm-up windows seed the reference through
/// the offline calibration path and are not scored; every later epoch is
/// scored against a reference snapshot, thresholded over the sliding SQI
/// buffer; the clean windows of a kept epoch are folded into the reference
/// with forgetting `λ`.
pub struct StreamEngine {
    hs: Handshake,
    cfg: StreamConfig,
    fx: FeatureExtractor,
    windows_per_epoch: usize,
    warmup_windows: usize,
    /// Warm-up epochs, which also sets the id of the first scored epoch.
    warmup_epochs: u64,
    warmup: Vec<Array2<f64>>,
    pending: Vec<Array2<f64>>,
    reference: Option<ReferenceHandle>,
    threshold: SlidingThreshold,
    buffered: std::collections::VecDeque<(u64, f64)>,
    next_epoch: u64,
}

impl StreamEngine {
    pub fn new(hs: Handshake, cfg: StreamConfig) -> Result<Self> {
        hs.validate()?;
        if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
            return Err(FaarError::BadConfig(format!("forgetting factor {} outside (0, 1]", cfg.lambda)));
        }
        if !(cfg.warmup_s > 0.0) {
            return Err(FaarError::BadConfig("warm-up must be positive".into()));
        }
        let windows_per_epoch = hs.windows_per_epoch()?;
        let raw = (cfg.warmup_s / hs.window_len_s - 1e-9).ceil() as usize;
        let warmup_epochs = raw.div_ceil(windows_per_epoch).max(1);
        let threshold = SlidingThreshold::new(cfg.buffer, cfg.sensitivity);
        Ok(Self {
            fx: FeatureExtractor::new(hs.fs, hs.window_len_s)?,
            hs,
            cfg,
            windows_per_epoch,
            warmup_windows: warmup_epochs * windows_per_epoch,
            warmup_epochs: warmup_epochs as u64,
            warmup: Vec::new(),
            pending: Vec::with_capacity(windows_per_epoch),
            reference: None,
            threshold,
            buffered: Default::default(),
            next_epoch: warmup_epochs as u64,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.hs
    }

    pub fn warmed_up(&self) -> bool {
        self.reference.is_some()
    }

    /// Seconds of signal consumed by warm-up (rounded up to whole epochs).
    pub fn warmup_duration_s(&self) -> f64 {
        self.warmup_windows as f64 * self.hs.window_len_s
    }

    pub fn first_scored_epoch(&self) -> u64 {
        self.warmup_epochs
    }

    pub fn reference(&self) -> Option<Arc<ReferenceModel>> {
        self.reference.as_ref().map(ReferenceHandle::snapshot)
    }

    /// Feeds one `[channels × window_samples]` window; returns a decision
    /// when it completes an epoch.
    pub fn push_window(&mut self, window: ArrayView2<'_, f64>) -> Result<Option<RejectionDecision>> {
        let want = (self.hs.channels, self.fx.window_samples());
        if window.dim() != want {
            return Err(FaarError::ShapeMismatch(format!("window {:?}, expected {want:?}", window.dim())));
        }
        if self.reference.is_none() {
            self.warmup.push(window.to_owned());
            if self.warmup.len() == self.warmup_windows {
                self.calibrate()?;
            }
            return Ok(None);
        }
        self.pending.push(window.to_owned());
        if self.pending.len() < self.windows_per_epoch {
            return Ok(None);
        }
        let views: Vec<_> = self.pending.iter().map(|w| w.view()).collect();
        let block = concatenate(Axis(1), &views).map_err(|e| FaarError::ShapeMismatch(e.to_string()))?;
        self.pending.clear();
        let grid = self.fx.grid(block.view())?;
        let handle = self.reference.as_ref().expect("warmed up");
        let snapshot = handle.snapshot();
        let id = self.next_epoch;
        self.next_epoch += 1;
        let report = epoch_sqi(id, &grid, &snapshot)?;
        self.threshold.push(report.sqi);
        self.buffered.push_back((id, report.sqi));
        if self.buffered.len() > self.threshold.len() {
            self.buffered.pop_front();
        }
        let threshold = self.threshold.threshold();
        let rejected = report.sqi > threshold;
        if !rejected {
            // only windows fully within the current reference may update it
            for (row, sev) in grid.values.outer_iter().zip(report.severity.outer_iter()) {
                if sev.iter().all(|s| *s == 0) {
                    handle.update(row, self.cfg.lambda);
                }
            }
        }
        Ok(Some(RejectionDecision { epoch_id: id, sqi: report.sqi, threshold, rejected, method: Method::Faar }))
    }

    /// Re-decides every epoch still in the sliding buffer against the
    /// buffer's current threshold.
    pub fn buffered_decisions(&self) -> Vec<RejectionDecision> {
        let threshold = self.threshold.threshold();
        self.buffered
            .iter()
            .map(|(id, sqi)| RejectionDecision {
                epoch_id: *id,
                sqi: *sqi,
                threshold,
                rejected: *sqi > threshold,
                method: Method::Faar,
            })
            .collect()
    }

    fn calibrate(&mut self) -> Result<()> {
        let views: Vec<_> = self.warmup.iter().map(|w| w.view()).collect();
        let data = concatenate(Axis(1), &views).map_err(|e| FaarError::ShapeMismatch(e.to_string()))?;
        let warm = Recording::new(data, self.hs.fs, default_channel_names(self.hs.channels), "stream", "0")?;
        let cfg = CalibrationConfig {
            window_len_s: self.hs.window_len_s,
            selection: self.cfg.selection,
            forgetting: self.cfg.lambda,
        };
        let cal = calibrate_recording(&warm, &cfg)?;
        self.reference = Some(ReferenceHandle::new(cal.model));
        self.warmup.clear();
        Ok(())
    }
}

/// Counts reported after a stream ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub windows: usize,
    pub epochs_scored: usize,
    pub epochs_rejected: usize,
}

/// Reads a handshake and frames from `input` and writes one decision line per
/// completed epoch to `output`, flushing after each.
pub fn run_stream(mut input: impl BufRead, mut output: impl Write, cfg: &StreamConfig) -> Result<StreamSummary> {
    let hs = read_handshake(&mut input)?;
    let mut engine = StreamEngine::new(hs, *cfg)?;
    let mut summary = StreamSummary { windows: 0, epochs_scored: 0, epochs_rejected: 0 };
    while let Some(frame) = read_frame(&mut input, &hs)? {
        summary.windows += 1;
        if let Some(d) = engine.push_window(frame.view())? {
            summary.epochs_scored += 1;
            summary.epochs_rejected += usize::from(d.rejected);
            serde_json::to_writer(&mut output, &d)?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    if !engine.warmed_up() {
        return Err(FaarError::TooFewWindows { need: engine.warmup_windows, got: summary.windows });
    }
    Ok(summary)
}
