//! Fixtures shared by the integration targets.
#![allow(dead_code)]

use faar::io::stream::{encode_recording, read_frame, read_handshake, StreamConfig, StreamEngine};
use faar::model::default_channel_names;
use faar::rng::PortableRng;
use faar::synth::{gen_recording, SynthConfig};
use faar::{EpochTensor, Recording, RejectionDecision};
use ndarray::{s, Array3};

pub const STREAM_WINDOW_S: f64 = 1.0;
pub const STREAM_EPOCH_S: f64 = 2.0;

pub fn f32_exact(rng: &mut PortableRng, scale: f64) -> f64 {
    (rng.normal() * scale) as f32 as f64
}

/// A random f32-representable epoch batch with varied shape, scale and metadata.
pub fn random_corpus(seed: u64) -> EpochTensor {
    let mut rng = PortableRng::new(seed);
    let (n, c, t) = (1 + rng.below(12), 1 + rng.below(6), 4 + rng.below(120));
    let scale = 10f64.powf(rng.uniform_in(-3.0, 3.0));
    let data = Array3::from_shape_fn((n, c, t), |_| f32_exact(&mut rng, scale));
    let fs = [100.0, 128.0, 250.0, 512.0][rng.below(4)];
    let mut e = EpochTensor::new(data, fs, default_channel_names(c)).unwrap();
    if rng.uniform() < 0.7 {
        e = e.with_labels((0..n).map(|_| rng.below(3) as u32).collect()).unwrap();
    }
    e = e.with_epoch_ids((0..n as u64).map(|i| 1000 * seed + 3 * i).collect()).unwrap();
    if rng.uniform() < 0.5 {
        e.subject_ids = (0..n).map(|i| format!("S{}", i % 2)).collect();
        e.session_ids = (0..n).map(|i| format!("{}", i % 3)).collect();
    } else {
        e = e.with_tags(&format!("sub-{seed}"), "A");
    }
    e
}

pub fn same_bits(a: &EpochTensor, b: &EpochTensor) -> bool {
    a.data.dim() == b.data.dim()
        && a.data.iter().zip(b.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.fs.to_bits() == b.fs.to_bits()
        && a.labels == b.labels
        && a.epoch_ids == b.epoch_ids
        && a.channel_names == b.channel_names
        && a.subject_ids == b.subject_ids
        && a.session_ids == b.session_ids
}

/// A clean recording with a few gross bursts after the warm-up period,
/// rounded to the f32 samples the wire format carries.
pub fn burst_recording(seed: u64, duration_s: f64) -> Recording {
    let mut r = gen_recording(&SynthConfig { n_channels: 4, seed, ..Default::default() }, duration_s).unwrap();
    let fs = r.fs as usize;
    for start_s in [14, 31, 52].into_iter().filter(|s| (*s as f64) < duration_s) {
        r.data.slice_mut(s![0..2, start_s * fs..(start_s + 1) * fs]).mapv_inplace(|v| 12.0 * v);
    }
    r.data.mapv_inplace(|v| v as f32 as f64);
    r
}

/// Frames `r` and feeds every window through a fresh engine.
pub fn stream_all(r: &Recording, cfg: StreamConfig) -> (StreamEngine, Vec<RejectionDecision>) {
    let bytes = encode_recording(r, STREAM_WINDOW_S, STREAM_EPOCH_S).unwrap();
    let mut input = &bytes[..];
    let hs = read_handshake(&mut input).unwrap();
    let mut engine = StreamEngine::new(hs, cfg).unwrap();
    let mut out = Vec::new();
    while let Some(w) = read_frame(&mut input, &hs).unwrap() {
        out.extend(engine.push_window(w.view()).unwrap());
    }
    (engine, out)
}
