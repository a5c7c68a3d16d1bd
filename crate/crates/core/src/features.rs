//! The five artifact-sensitive descriptors, computed per channel and short
//! window: in-band spectral magnitude, RMS, maximum temporal gradient,
//! zero-crossing rate and kurtosis.

use std::sync::Arc;

use ndarray::{Array3, ArrayView2, Axis, s};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{FaarError, Result};
use crate::model::{EpochTensor, WindowGrid, FEATURE_COUNT, FEATURE_NAMES};

pub const DEFAULT_WINDOW_S: f64 = 1.0;
pub const DEFAULT_BAND: (f64, f64) = (8.0, 32.0);

/// Recorded in place of kurtosis for a zero-variance window. Non-finite, so it
/// always maps to the maximum severity.
pub const FLAT_KURTOSIS: f64 = f64::INFINITY;

/// Indices into a feature row, in canonical order.
pub mod idx {
    pub const BAND_MAG: usize = 0;
    pub const RMS: usize = 1;
    pub const MAX_GRAD: usize = 2;
    pub const ZCR: usize = 3;
    pub const KURT: usize = 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub band_mag: f64,
    pub rms: f64,
    pub max_grad: f64,
    pub zcr: f64,
    pub kurt: f64,
}

impl FeatureVector {
    pub fn to_array(self) -> [f64; FEATURE_COUNT] {
        [self.band_mag, self.rms, self.max_grad, self.zcr, self.kurt]
    }
}

fn check_band(n: usize, fs: f64, lo: f64, hi: f64) -> Result<()> {
    if n < 2 {
        return Err(FaarError::TooShort { need: 2, got: n });
    }
    if !(lo > 0.0 && lo < hi && hi <= fs / 2.0) {
        return Err(FaarError::BandOutOfRange { lo, hi, fs });
    }
    Ok(())
}

/// Mean |DFT| over one-sided bins with `lo ≤ f ≤ hi` of the mean-removed,
/// rectangular-windowed segment.
pub fn band_magnitude(x: &[f64], fs: f64, lo: f64, hi: f64) -> Result<f64> {
    check_band(x.len(), fs, lo, hi)?;
    BandMagnitude::new(x.len(), fs, lo, hi)?.compute(x)
}

/// Reusable FFT plan for a fixed window length and band.
#[derive(Clone)]
pub struct BandMagnitude {
    fft: Arc<dyn Fft<f64>>,
    n: usize,
    bins: (usize, usize),
}

impl BandMagnitude {
    pub fn new(n: usize, fs: f64, lo: f64, hi: f64) -> Result<Self> {
        check_band(n, fs, lo, hi)?;
        let df = fs / n as f64;
        let first = (lo / df).ceil() as usize;
        let last = ((hi / df).floor() as usize).min(n / 2);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self { fft, n, bins: (first, last) })
    }

    pub fn compute(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(FaarError::ShapeMismatch(format!(
                "window has {} samples, plan expects {}",
                x.len(),
                self.n
            )));
        }
        let (first, last) = self.bins;
        if first > last {
            return Ok(0.0);
        }
        let mean = x.iter().sum::<f64>() / self.n as f64;
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        self.fft.process(&mut buf);
        let total: f64 = buf[first..=last].iter().map(|c| c.norm()).sum();
        Ok(total / (last - first + 1) as f64)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn max_gradient(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(FaarError::TooShort { need: 2, got: x.len() });
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max))
}

/// Sign changes per consecutive pair. A zero sample carries the sign of the
/// previous nonzero sample; leading zeros take the first nonzero sign.
pub fn zero_crossing_rate(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(FaarError::TooShort { need: 2, got: x.len() });
    }
    let Some(first) = x.iter().copied().find(|v| *v != 0.0) else {
        return Ok(0.0);
    };
    let mut prev = first > 0.0;
    let mut crossings = 0usize;
    for &v in &x[1..] {
        if v == 0.0 {
            continue;
        }
        let cur = v > 0.0;
        if cur != prev {
            crossings += 1;
        }
        prev = cur;
    }
    Ok(crossings as f64 / (x.len() - 1) as f64)
}

/// Pearson kurtosis `m4 / m2²` from biased central moments.
pub fn kurtosis(x: &[f64]) -> Result<f64> {
    if x.len() < 4 {
        return Err(FaarError::TooShort { need: 4, got: x.len() });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in x {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 1e-30 * mean_sq || m2 == 0.0 {
        return Err(FaarError::ZeroVariance);
    }
    Ok(m4 / (m2 * m2))
}

/// Computes feature rows for multichannel windows of one fixed length.
#[derive(Clone)]
pub struct FeatureExtractor {
    band: BandMagnitude,
    window_samples: usize,
    window_len_s: f64,
}

impl FeatureExtractor {
    pub fn new(fs: f64, window_len_s: f64) -> Result<Self> {
        Self::with_band(fs, window_len_s, DEFAULT_BAND)
    }

    pub fn with_band(fs: f64, window_len_s: f64, band: (f64, f64)) -> Result<Self> {
        let window_samples = window_samples(fs, window_len_s)?;
        Ok(Self {
            band: BandMagnitude::new(window_samples, fs, band.0, band.1)?,
            window_samples,
            window_len_s,
        })
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn window_len_s(&self) -> f64 {
        self.window_len_s
    }

    pub fn window_features(&self, x: &[f64]) -> Result<FeatureVector> {
        let kurt = match kurtosis(x) {
            Ok(k) => k,
            Err(FaarError::ZeroVariance) => FLAT_KURTOSIS,
            Err(e) => return Err(e),
        };
        Ok(FeatureVector {
            band_mag: self.band.compute(x)?,
            rms: rms(x),
            max_grad: max_gradient(x)?,
            zcr: zero_crossing_rate(x)?,
            kurt,
        })
    }

    /// Features for `[channels × samples]` cut into consecutive windows;
    /// the trailing remainder is dropped.
    pub fn grid(&self, block: ArrayView2<'_, f64>) -> Result<WindowGrid> {
        let (channels, samples) = block.dim();
        let w = self.window_samples;
        let n_windows = samples / w;
        if n_windows == 0 {
            return Err(FaarError::WindowTooShort { samples, need: w });
        }
        let mut values = Array3::zeros((n_windows, channels, FEATURE_COUNT));
        let mut scratch = vec![0.0; w];
        for win in 0..n_windows {
            for c in 0..channels {
                let seg = block.slice(s![c, win * w..(win + 1) * w]);
                for (dst, src) in scratch.iter_mut().zip(seg.iter()) {
                    *dst = *src;
                }
                let fv = self.window_features(&scratch)?.to_array();
                for (f, v) in fv.into_iter().enumerate() {
                    values[[win, c, f]] = v;
                }
            }
        }
        Ok(WindowGrid {
            values,
            window_len_s: self.window_len_s,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        })
    }
}

pub fn window_samples(fs: f64, window_len_s: f64) -> Result<usize> {
    let w = (window_len_s * fs).round();
    if !(w.is_finite() && w >= 4.0) {
        return Err(FaarError::WindowTooShort { samples: w.max(0.0) as usize, need: 4 });
    }
    Ok(w as usize)
}

/// One grid per epoch, in epoch order.
pub fn extract_features(e: &EpochTensor, window_len_s: f64) -> Result<Vec<WindowGrid>> {
    let fx = FeatureExtractor::new(e.fs, window_len_s)?;
    e.data.axis_iter(Axis(0)).map(|ep| fx.grid(ep)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dft_band_oracle(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let (mut total, mut count) = (0.0, 0);
        for k in 0..=n / 2 {
            let f = k as f64 * fs / n as f64;
            if f < lo || f > hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += (v - mean) * ang.cos();
                im += (v - mean) * ang.sin();
            }
            total += (re * re + im * im).sqrt();
            count += 1;
        }
        if count == 0 { 0.0 } else { total / count as f64 }
    }

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|t| amp * (2.0 * PI * freq * t as f64 / fs).sin()).collect()
    }

    #[test]
    fn band_magnitude_matches_direct_dft() {
        let x = sine(10.0, 256.0, 256, 1.0);
        let got = band_magnitude(&x, 256.0, 8.0, 32.0).unwrap();
        let want = dft_band_oracle(&x, 256.0, 8.0, 32.0);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        // 25 inclusive bins, the 10 Hz bin holds N/2 = 128
        assert!((got - 128.0 / 25.0).abs() < 1e-9);
    }

    #[test]
    fn band_magnitude_zero_and_out_of_band() {
        assert_eq!(band_magnitude(&[0.0; 256], 256.0, 8.0, 32.0).unwrap(), 0.0);
        let x = sine(50.0, 256.0, 256, 1.0);
        assert!(band_magnitude(&x, 256.0, 8.0, 32.0).unwrap() <= 1e-9);
    }

    #[test]
    fn band_errors() {
        let x = [0.0; 64];
        assert!(matches!(band_magnitude(&x, 100.0, 8.0, 60.0), Err(FaarError::BandOutOfRange { .. })));
        assert!(matches!(band_magnitude(&x, 100.0, 30.0, 30.0), Err(FaarError::BandOutOfRange { .. })));
    }

    #[test]
    fn rms_cases() {
        assert_eq!(rms(&[0.0; 10]), 0.0);
        assert_eq!(rms(&[3.0, -3.0, 3.0, -3.0]), 3.0);
    }

    #[test]
    fn gradient_cases() {
        assert_eq!(max_gradient(&[1.0, 2.0, 4.0, 4.0]).unwrap(), 2.0);
        assert_eq!(max_gradient(&[5.0; 8]).unwrap(), 0.0);
        assert!(matches!(max_gradient(&[1.0]), Err(FaarError::TooShort { .. })));
    }

    #[test]
    fn zcr_cases() {
        let alt: Vec<f64> = (0..11).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(zero_crossing_rate(&alt).unwrap(), 1.0);
        assert_eq!(zero_crossing_rate(&[2.0; 9]).unwrap(), 0.0);
        assert_eq!(zero_crossing_rate(&[0.0; 9]).unwrap(), 0.0);
        // plateau of zeros between opposite signs counts once
        assert_eq!(zero_crossing_rate(&[1.0, 0.0, 0.0, -1.0, 0.0]).unwrap(), 0.25);
        // leading zeros inherit the first nonzero sign
        assert_eq!(zero_crossing_rate(&[0.0, 0.0, -1.0, -2.0, 3.0]).unwrap(), 0.25);
    }

    #[test]
    fn zcr_of_sampled_sine() {
        // sin(2π·5t) on 250 samples: sign changes at the 9 interior zeros
        // (t = 0.1..0.9 s); exact zeros inherit the previous sign.
        let x = sine(5.0, 250.0, 250, 1.0);
        let mut prev = x[1] > 0.0;
        let mut count = 0;
        for v in &x[2..] {
            if *v == 0.0 {
                continue;
            }
            if (*v > 0.0) != prev {
                count += 1;
            }
            prev = *v > 0.0;
        }
        let got = zero_crossing_rate(&x).unwrap();
        assert_eq!(got, count as f64 / 249.0);
        assert!((got * 249.0 - 10.0).abs() <= 1.0);
    }

    #[test]
    fn kurtosis_cases() {
        let alt: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((kurtosis(&alt).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(kurtosis(&[2.0; 16]), Err(FaarError::ZeroVariance)));
        assert!(matches!(kurtosis(&[0.0; 16]), Err(FaarError::ZeroVariance)));
        assert!(matches!(kurtosis(&[1.0, 2.0, 3.0]), Err(FaarError::TooShort { .. })));
    }

    #[test]
    fn window_counts_follow_floor_rule() {
        let fx = FeatureExtractor::new(100.0, 1.0).unwrap();
        let block = ndarray::Array2::from_shape_fn((3, 450), |(c, t)| ((c * 13 + t) as f64 * 0.7).sin());
        assert_eq!(fx.grid(block.view()).unwrap().n_windows(), 4);
        let block = ndarray::Array2::from_shape_fn((3, 400), |(c, t)| ((c * 13 + t) as f64 * 0.7).sin());
        assert_eq!(fx.grid(block.view()).unwrap().n_windows(), 4);
        let short = ndarray::Array2::<f64>::zeros((3, 50));
        assert!(matches!(fx.grid(short.view()), Err(FaarError::WindowTooShort { .. })));
        assert!(matches!(FeatureExtractor::new(2.0, 1.0), Err(FaarError::WindowTooShort { .. })));
    }

    #[test]
    fn flat_window_records_sentinel() {
        let fx = FeatureExtractor::new(100.0, 1.0).unwrap();
        let fv = fx.window_features(&[0.0; 100]).unwrap();
        assert_eq!(fv.kurt, FLAT_KURTOSIS);
        assert_eq!(fv.rms, 0.0);
        assert_eq!(fv.zcr, 0.0);
    }
}
