//! Seeded synthetic EEG: 1/f background plus alpha/beta oscillations, planted
//! artifacts with ground-truth labels, and a two-class variant whose classes
//! differ in oscillation power on chosen channels.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::decoder::filter::BandPass;
use crate::error::{FaarError, Result};
use crate::features;
use crate::model::{default_channel_names, EpochTensor, Recording};
use crate::rng::PortableRng;

/// Oscillation gain (µV) for channels without an explicit entry.
pub const DEFAULT_GAIN: f64 = 8.0;
/// Order of the autoregressive 1/f^β shaping filter.
const NOISE_AR_ORDER: usize = 64;
const NOISE_BURN_IN: usize = 4 * NOISE_AR_ORDER;
/// Corner of the one-pole high-pass applied to the background; it keeps the
/// truncated 1/f process from wandering below the epoch's resolution.
const NOISE_HIGHPASS_HZ: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub fs: f64,
    pub epoch_s: f64,
    pub n_epochs: usize,
    pub alpha_hz: f64,
    pub beta_hz: f64,
    /// Spectral slope β of the background, in 1/f^β.
    pub noise_exponent: f64,
    /// Background RMS, µV.
    pub noise_rms: f64,
    /// Per-channel oscillation amplitude, µV. Empty means `DEFAULT_GAIN` everywhere.
    pub gains: Vec<f64>,
    /// Log-normal σ of the per-epoch, per-channel oscillation amplitude.
    pub amplitude_jitter: f64,
    pub seed: u64,
    pub subject_id: String,
    pub session_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_channels: 8,
            fs: 250.0,
            epoch_s: 4.0,
            n_epochs: 100,
            alpha_hz: 10.0,
            beta_hz: 20.0,
            noise_exponent: 1.5,
            noise_rms: 4.0,
            gains: Vec::new(),
            amplitude_jitter: 0.03,
            seed: 0,
            subject_id: "S0".into(),
            session_id: "0".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_epochs == 0 {
            return Err(FaarError::BadConfig("need at least one channel and one epoch".into()));
        }
        if !(self.fs > 2.0 * self.beta_hz) {
            return Err(FaarError::BadConfig(format!("fs {} must exceed 2·beta_hz", self.fs)));
        }
        if !(self.epoch_s * self.fs >= 4.0) {
            return Err(FaarError::BadConfig("epochs must hold at least 4 samples".into()));
        }
        if !self.gains.is_empty() && self.gains.len() != self.n_channels {
            return Err(FaarError::BadConfig(format!(
                "{} gains for {} channels",
                self.gains.len(),
                self.n_channels
            )));
        }
        if self.noise_rms < 0.0 || self.amplitude_jitter < 0.0 {
            return Err(FaarError::BadConfig("noise_rms and amplitude_jitter must be ≥ 0".into()));
        }
        Ok(())
    }

    fn gain(&self, c: usize) -> f64 {
        self.gains.get(c).copied().unwrap_or(DEFAULT_GAIN)
    }

    fn epoch_samples(&self) -> usize {
        (self.epoch_s * self.fs).round() as usize
    }
}

/// AR approximation of fractional integration (Kasdin): unit-variance output
/// after scaling by the impulse-response energy.
struct PinkNoise {
    ar: Vec<f64>,
    pole: f64,
    scale: f64,
}

impl PinkNoise {
    fn new(beta: f64, fs: f64) -> Self {
        let mut ar = vec![1.0; NOISE_AR_ORDER + 1];
        for k in 1..=NOISE_AR_ORDER {
            ar[k] = ar[k - 1] * (k as f64 - 1.0 - beta / 2.0) / k as f64;
        }
        let mut impulse = vec![0.0; 4096];
        impulse[0] = 1.0;
        let pole = (-2.0 * PI * NOISE_HIGHPASS_HZ / fs).exp();
        let mut tmp = Self { ar, pole, scale: 1.0 };
        tmp.filter(&mut impulse);
        let energy: f64 = impulse.iter().map(|v| v * v).sum();
        tmp.scale = 1.0 / energy.sqrt();
        tmp
    }

    fn filter(&self, x: &mut [f64]) {
        for t in 0..x.len() {
            let mut acc = x[t];
            for k in 1..=NOISE_AR_ORDER.min(t) {
                acc -= self.ar[k] * x[t - k];
            }
            x[t] = acc;
        }
        let (mut prev_in, mut prev_out) = (0.0, 0.0);
        for v in x.iter_mut() {
            let out = *v - prev_in + self.pole * prev_out;
            prev_in = *v;
            prev_out = out;
            *v = out;
        }
    }

    fn generate(&self, rng: &mut PortableRng, n: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..n + NOISE_BURN_IN).map(|_| rng.normal()).collect();
        self.filter(&mut x);
        x.drain(..NOISE_BURN_IN);
        for v in &mut x {
            *v *= self.scale;
        }
        x
    }
}

fn oscillation_block(
    cfg: &SynthConfig,
    rng: &mut PortableRng,
    noise: &PinkNoise,
    n: usize,
    t0: f64,
    channel_gain: &dyn Fn(usize) -> f64,
) -> Array2<f64> {
    let mut data = Array2::zeros((cfg.n_channels, n));
    for c in 0..cfg.n_channels {
        let bg = noise.generate(rng, n);
        let phi_a = rng.uniform_in(0.0, 2.0 * PI);
        let phi_b = rng.uniform_in(0.0, 2.0 * PI);
        let jitter = (cfg.amplitude_jitter * rng.normal()).exp();
        let g = cfg.gain(c) * channel_gain(c) * jitter;
        for (t, v) in data.row_mut(c).iter_mut().enumerate() {
            let time = t0 + t as f64 / cfg.fs;
            *v = cfg.noise_rms * bg[t]
                + g * ((2.0 * PI * cfg.alpha_hz * time + phi_a).sin() + (2.0 * PI * cfg.beta_hz * time + phi_b).sin());
        }
    }
    data
}

/// Clean epochs; epoch `i` draws from stream `(seed, i)`.
pub fn gen_clean(cfg: &SynthConfig) -> Result<EpochTensor> {
    gen_with_gain(cfg, |_, _| 1.0)
}

fn gen_with_gain(cfg: &SynthConfig, gain: impl Fn(usize, usize) -> f64) -> Result<EpochTensor> {
    cfg.validate()?;
    let n = cfg.epoch_samples();
    let noise = PinkNoise::new(cfg.noise_exponent, cfg.fs);
    let mut data = Array3::zeros((cfg.n_epochs, cfg.n_channels, n));
    for (e, mut dst) in data.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = PortableRng::for_stream(cfg.seed, e as u64);
        dst.assign(&oscillation_block(cfg, &mut rng, &noise, n, 0.0, &|c| gain(e, c)));
    }
    Ok(EpochTensor::new(data, cfg.fs, default_channel_names(cfg.n_channels))?
        .with_tags(&cfg.subject_id, &cfg.session_id))
}

/// A continuous clean recording of `duration_s` seconds, generated in
/// one-second blocks with continuous oscillation phase.
pub fn gen_recording(cfg: &SynthConfig, duration_s: f64) -> Result<Recording> {
    cfg.validate()?;
    let total = (duration_s * cfg.fs).round() as usize;
    if total == 0 {
        return Err(FaarError::BadConfig("recording duration rounds to zero samples".into()));
    }
    let noise = PinkNoise::new(cfg.noise_exponent, cfg.fs);
    let mut rng = PortableRng::for_stream(cfg.seed, u64::MAX);
    let mut data = Array2::zeros((cfg.n_channels, total));
    let phases: Vec<(f64, f64)> =
        (0..cfg.n_channels).map(|_| (rng.uniform_in(0.0, 2.0 * PI), rng.uniform_in(0.0, 2.0 * PI))).collect();
    for c in 0..cfg.n_channels {
        let bg = noise.generate(&mut rng, total);
        let g = cfg.gain(c);
        let (pa, pb) = phases[c];
        for (t, v) in data.row_mut(c).iter_mut().enumerate() {
            let time = t as f64 / cfg.fs;
            *v = cfg.noise_rms * bg[t]
                + g * ((2.0 * PI * cfg.alpha_hz * time + pa).sin() + (2.0 * PI * cfg.beta_hz * time + pb).sin());
        }
    }
    Recording::new(data, cfg.fs, default_channel_names(cfg.n_channels), cfg.subject_id.clone(), cfg.session_id.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ArtifactKind {
    Blink,
    Emg,
    Step,
    Drift,
    None,
}

impl ArtifactKind {
    pub const PLANTED: [ArtifactKind; 4] = [ArtifactKind::Blink, ArtifactKind::Emg, ArtifactKind::Step, ArtifactKind::Drift];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactLabel {
    pub epoch_id: u64,
    pub kind: ArtifactKind,
    pub affected_channels: Vec<usize>,
    /// Multiple of the channel's clean RMS.
    pub scale: f64,
}

impl ArtifactLabel {
    pub fn clean(epoch_id: u64) -> Self {
        Self { epoch_id, kind: ArtifactKind::None, affected_channels: Vec::new(), scale: 0.0 }
    }

    pub fn is_artifact(&self) -> bool {
        self.kind != ArtifactKind::None && self.scale > 0.0
    }
}

/// Per-channel median of the per-epoch RMS.
pub fn clean_rms(e: &EpochTensor) -> Vec<f64> {
    (0..e.n_channels())
        .map(|c| {
            let mut v: Vec<f64> = (0..e.n_epochs())
                .map(|i| features::rms(&e.data.slice(ndarray::s![i, c, ..]).to_vec()))
                .collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
        })
        .collect()
}

const BLINK_S: f64 = 0.3;
const EMG_LOW_HZ: f64 = 40.0;

/// Adds the labelled artifacts, scaled by the input's per-channel median RMS.
pub fn inject(e: &EpochTensor, labels: &[ArtifactLabel], seed: u64) -> Result<EpochTensor> {
    let position: HashMap<u64, usize> = e.epoch_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let ref_rms = clean_rms(e);
    let mut out = e.clone();
    let n = e.n_samples();
    let fs = e.fs;
    for label in labels {
        let Some(&ei) = position.get(&label.epoch_id) else {
            return Err(FaarError::LabelOutOfRange(format!("epoch {} not in tensor", label.epoch_id)));
        };
        if let Some(&c) = label.affected_channels.iter().find(|&&c| c >= e.n_channels()) {
            return Err(FaarError::LabelOutOfRange(format!("channel {c} ≥ {}", e.n_channels())));
        }
        if !(label.scale >= 0.0) || (label.kind == ArtifactKind::None) != (label.scale == 0.0) {
            return Err(FaarError::LabelOutOfRange(format!(
                "epoch {}: kind {:?} with scale {}",
                label.epoch_id, label.kind, label.scale
            )));
        }
        if label.scale == 0.0 {
            continue;
        }
        let mut rng = PortableRng::for_stream(seed, label.epoch_id);
        let shape: Vec<f64> = match label.kind {
            ArtifactKind::Blink => {
                let len = ((BLINK_S * fs).round() as usize).min(n);
                let onset = rng.below(n - len + 1);
                let mut s = vec![0.0; n];
                for k in 0..len {
                    s[onset + k] = (PI * k as f64 / len as f64).sin();
                }
                s
            }
            ArtifactKind::Step => {
                let onset = (n as f64 * rng.uniform_in(0.1, 0.9)) as usize;
                (0..n).map(|t| if t >= onset { 1.0 } else { 0.0 }).collect()
            }
            ArtifactKind::Drift => (0..n).map(|t| t as f64 / (n - 1).max(1) as f64).collect(),
            ArtifactKind::Emg | ArtifactKind::None => Vec::new(),
        };
        for &c in &label.affected_channels {
            let amp = label.scale * ref_rms[c];
            let add: Vec<f64> = if label.kind == ArtifactKind::Emg {
                let hi = 0.45 * fs;
                if hi <= EMG_LOW_HZ {
                    return Err(FaarError::BadConfig(format!("fs {fs} too low for EMG surrogate")));
                }
                let bp = BandPass::butterworth(4, EMG_LOW_HZ, hi, fs)?;
                let white: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                let burst = bp.filtfilt(ndarray::ArrayView1::from(&white));
                let r = features::rms(&burst).max(1e-300);
                burst.iter().map(|v| v / r * amp).collect()
            } else {
                shape.iter().map(|v| v * amp).collect()
            };
            for (dst, a) in out.data.slice_mut(ndarray::s![ei, c, ..]).iter_mut().zip(add) {
                *dst += a;
            }
        }
    }
    Ok(out)
}

/// Which channels an artifact of each kind touches in planted corpora.
pub fn default_affected_channels(kind: ArtifactKind, n_channels: usize, rng: &mut PortableRng) -> Vec<usize> {
    let quarter = n_channels.div_ceil(4).max(1);
    match kind {
        // frontal: the first channels
        ArtifactKind::Blink => (0..n_channels.div_ceil(2).max(1)).collect(),
        ArtifactKind::Emg | ArtifactKind::Drift => {
            let start = rng.below(n_channels);
            (0..n_channels.div_ceil(2).max(1)).map(|k| (start + k) % n_channels).collect()
        }
        ArtifactKind::Step => {
            let mut v = rng.sample_indices(n_channels, quarter);
            v.sort_unstable();
            v
        }
        ArtifactKind::None => Vec::new(),
    }
}

/// Labels for every epoch id: `round(fraction · n)` contaminated epochs chosen
/// without replacement, kinds cycling through `kinds`, scale uniform in
/// `scale_range`.
pub fn plan_artifacts(
    epoch_ids: &[u64],
    n_channels: usize,
    fraction: f64,
    kinds: &[ArtifactKind],
    scale_range: (f64, f64),
    seed: u64,
) -> Vec<ArtifactLabel> {
    let mut rng = PortableRng::for_stream(seed, 0xA57F);
    let n_bad = ((fraction * epoch_ids.len() as f64).round() as usize).min(epoch_ids.len());
    let chosen = rng.sample_indices(epoch_ids.len(), n_bad);
    let mut labels: Vec<ArtifactLabel> = epoch_ids.iter().map(|id| ArtifactLabel::clean(*id)).collect();
    for (k, &i) in chosen.iter().enumerate() {
        let kind = kinds[k % kinds.len()];
        if kind == ArtifactKind::None {
            continue;
        }
        labels[i] = ArtifactLabel {
            epoch_id: epoch_ids[i],
            kind,
            affected_channels: default_affected_channels(kind, n_channels, &mut rng),
            scale: rng.uniform_in(scale_range.0, scale_range.1),
        };
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGainMap {
    /// Channels whose oscillation gain depends on the class.
    pub channels: Vec<usize>,
    /// Gain multiplier for class 0 and class 1.
    pub gains: [f64; 2],
}

impl ClassGainMap {
    /// Class 1 gets `ratio ×` the oscillation amplitude of class 0 on `channels`.
    pub fn ratio(channels: Vec<usize>, ratio: f64) -> Self {
        Self { channels, gains: [1.0, ratio] }
    }
}

/// Balanced two-class corpus, labels alternating 0, 1, 0, ...
pub fn gen_two_class(cfg: &SynthConfig, map: &ClassGainMap) -> Result<EpochTensor> {
    if map.channels.is_empty() || map.channels.iter().any(|&c| c >= cfg.n_channels) {
        return Err(FaarError::BadConfig("class gain map must name valid channels".into()));
    }
    if map.gains.iter().any(|g| !(*g > 0.0)) {
        return Err(FaarError::BadConfig("class gains must be positive".into()));
    }
    let labels: Vec<u32> = (0..cfg.n_epochs as u32).map(|i| i % 2).collect();
    let e = gen_with_gain(cfg, |e, c| if map.channels.contains(&c) { map.gains[e % 2] } else { 1.0 })?;
    e.with_labels(labels)
}

/// Replaces the labels of the given epochs with fresh random classes.
pub fn shuffle_labels(e: &EpochTensor, epoch_ids: &[u64], seed: u64) -> EpochTensor {
    let mut out = e.clone();
    if let Some(labels) = out.labels.as_mut() {
        let mut rng = PortableRng::for_stream(seed, 0x5AFF1E);
        for (i, id) in e.epoch_ids.iter().enumerate() {
            if epoch_ids.contains(id) {
                labels[i] = rng.below(2) as u32;
            }
        }
    }
    out
}
