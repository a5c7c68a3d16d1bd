//! Zero-phase Butterworth band-pass built from second-order sections.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rustfft::num_complex::Complex;

use crate::error::{FaarError, Result};
use crate::model::{EpochTensor, Recording};

pub const MI_BAND: (f64, f64) = (8.0, 32.0);
pub const DEFAULT_ORDER: usize = 4;

/// One biquad `b0 + b1 z⁻¹ + b2 z⁻² / 1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
    pub lo: f64,
    pub hi: f64,
    pub fs: f64,
}

impl BandPass {
    /// Digital Butterworth band-pass of prototype order `order` (2·order poles),
    /// designed by the bilinear transform with pre-warped edges and unit gain
    /// at the geometric center.
    pub fn butterworth(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(FaarError::BandOutOfRange { lo, hi, fs });
        }
        if order == 0 || order % 2 == 1 {
            return Err(FaarError::BadConfig(format!("band-pass prototype order {order} must be even")));
        }
        let k = 2.0 * fs;
        let w_lo = k * (PI * lo / fs).tan();
        let w_hi = k * (PI * hi / fs).tan();
        let bw = w_hi - w_lo;
        let w0 = (w_lo * w_hi).sqrt();

        let mut sections = Vec::with_capacity(order);
        for i in 0..order {
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let p = Complex::from_polar(1.0, theta);
            // low-pass → band-pass: s² − p·bw·s + w0² = 0
            let half = p * bw * 0.5;
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                if s.im < 0.0 {
                    continue;
                }
                // bilinear transform of the upper-half-plane pole
                let z = (Complex::new(k, 0.0) + s) / (Complex::new(k, 0.0) - s);
                sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] });
            }
        }
        let mut bp = BandPass { sections, lo, hi, fs };
        let center = 2.0 * (w0 / k).atan();
        let g = bp.response(center).norm();
        let per = g.powf(-1.0 / bp.sections.len() as f64);
        for s in &mut bp.sections {
            for b in &mut s.b {
                *b *= per;
            }
        }
        Ok(bp)
    }

    /// Complex response at digital frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex::new(1.0, 0.0), |acc, s| {
            let num = z1 * s.b[1] + z2 * s.b[2] + s.b[0];
            let den = z1 * s.a[0] + z2 * s.a[1] + 1.0;
            acc * num / den
        })
    }

    /// Single causal pass, direct form II transposed.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let y = s.b[0] * *v + z1;
                z1 = s.b[1] * *v - s.a[0] * y + z2;
                z2 = s.b[2] * *v - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward pass with odd-reflection padding; the mean is removed first.
    pub fn filtfilt(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let mean = x.sum() / n as f64;
        let pad = (3 * (2 * self.sections.len() + 1)).max((self.fs / self.lo).ceil() as usize * 2).min(n - 1);
        let mut buf = Vec::with_capacity(n + 2 * pad);
        let first = x[0] - mean;
        let last = x[n - 1] - mean;
        for i in (1..=pad).rev() {
            buf.push(2.0 * first - (x[i] - mean));
        }
        buf.extend(x.iter().map(|v| v - mean));
        for i in 1..=pad {
            buf.push(2.0 * last - (x[n - 1 - i] - mean));
        }
        self.filter_in_place(&mut buf);
        buf.reverse();
        self.filter_in_place(&mut buf);
        buf.reverse();
        buf[pad..pad + n].to_vec()
    }

    pub fn apply_rows(&self, data: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(data.dim());
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(data.axis_iter(Axis(0))) {
            for (d, v) in dst.iter_mut().zip(self.filtfilt(src)) {
                *d = v;
            }
        }
        out
    }
}

/// Zero-phase 4th-order Butterworth band-pass of a continuous recording.
pub fn bandpass(r: &Recording, lo: f64, hi: f64) -> Result<Recording> {
    let bp = BandPass::butterworth(DEFAULT_ORDER, lo, hi, r.fs)?;
    Ok(Recording { data: bp.apply_rows(&r.data), ..r.clone() })
}

/// Band-passes each epoch independently.
pub fn bandpass_epochs(e: &EpochTensor, lo: f64, hi: f64) -> Result<EpochTensor> {
    let bp = BandPass::butterworth(DEFAULT_ORDER, lo, hi, e.fs)?;
    let mut data = Array3::zeros(e.data.dim());
    for (mut dst, src) in data.axis_iter_mut(Axis(0)).zip(e.data.axis_iter(Axis(0))) {
        dst.assign(&bp.apply_rows(&src.to_owned()));
    }
    Ok(EpochTensor { data, ..e.clone() })
}
