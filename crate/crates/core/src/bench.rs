//! Single-threaded streaming throughput on a synthetic recording.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FaarError, Result};
use crate::io::stream::{encode_recording, read_frame, read_handshake, StreamConfig, StreamEngine};
use crate::metrics::real_time_factor;
use crate::synth::{gen_recording, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub window_len_s: f64,
    pub epoch_len_s: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { channels: 64, fs: 250.0, duration_s: 120.0, window_len_s: 1.0, epoch_len_s: 4.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub windows: usize,
    pub epochs_scored: usize,
    /// Wall time spent inside the engine, warm-up calibration included.
    pub wall_s: f64,
    pub real_time_factor: f64,
    /// Slowest single window, which bounds per-window latency.
    pub max_window_s: f64,
}

/// Generates the recording, frames it, then times the engine alone. Frame
/// decoding and data generation are outside the measured span.
pub fn run_bench(cfg: &BenchConfig, stream: &StreamConfig) -> Result<BenchReport> {
    if !(cfg.duration_s > stream.warmup_s) {
        return Err(FaarError::BadConfig(format!(
            "bench duration {} s must exceed the {} s warm-up",
            cfg.duration_s, stream.warmup_s
        )));
    }
    let synth = SynthConfig { n_channels: cfg.channels, fs: cfg.fs, seed: cfg.seed, ..SynthConfig::default() };
    let rec = gen_recording(&synth, cfg.duration_s)?;
    let bytes = encode_recording(&rec, cfg.window_len_s, cfg.epoch_len_s)?;
    let mut input = &bytes[..];
    let hs = read_handshake(&mut input)?;
    let mut frames = Vec::new();
    while let Some(f) = read_frame(&mut input, &hs)? {
        frames.push(f);
    }
    let mut engine = StreamEngine::new(hs, *stream)?;
    let (mut wall, mut max_window, mut scored) = (0.0f64, 0.0f64, 0usize);
    for f in &frames {
        let t = Instant::now();
        let d = engine.push_window(f.view())?;
        let dt = t.elapsed().as_secs_f64();
        wall += dt;
        max_window = max_window.max(dt);
        scored += usize::from(d.is_some());
    }
    let signal_s = frames.len() as f64 * cfg.window_len_s;
    Ok(BenchReport {
        config: *cfg,
        windows: frames.len(),
        epochs_scored: scored,
        wall_s: wall,
        real_time_factor: real_time_factor(wall, signal_s)?,
        max_window_s: max_window,
    })
}
