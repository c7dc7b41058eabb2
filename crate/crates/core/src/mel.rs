//! Log-mel spectrogram as a differentiable op.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::config::MelSpec;
use crate::error::{input_err, Result};
use crate::tensor::{Float, Tensor};

/// Magnitude offset so the square root stays differentiable at zero.
const MAG_EPS: f64 = 1e-9;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, `[bands, fft_size / 2 + 1]`,
/// peak 1 and no area normalization.
pub fn mel_filterbank(spec: &MelSpec) -> Vec<f64> {
    let bins = spec.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(spec.fmin), hz_to_mel(spec.fmax));
    let edges: Vec<f64> = (0..spec.mel_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (spec.mel_bands + 1) as f64))
        .collect();
    let mut fb = vec![0.0; spec.mel_bands * bins];
    for b in 0..spec.mel_bands {
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * spec.sample_rate as f64 / spec.fft_size as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[b * bins + k] = w;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

pub struct MelAnalyzer<T: Float> {
    pub spec: MelSpec,
    window: Vec<T>,
    fb: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Float> MelAnalyzer<T> {
    pub fn new(spec: &MelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.fft_size;
        // window centred inside the FFT frame
        let off = (n - spec.window) / 2;
        let mut window = vec![T::zero(); n];
        for (i, w) in hann(spec.window).into_iter().enumerate() {
            window[off + i] = T::of_f64(w);
        }
        let mut planner = FftPlanner::new();
        Ok(MelAnalyzer {
            spec: spec.clone(),
            window,
            fb: mel_filterbank(spec).into_iter().map(T::of_f64).collect(),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    /// Frames of a `len`-sample signal: centred frames every hop, with
    /// `fft_size / 2` zeros on both sides.
    pub fn frames(&self, len: usize) -> usize {
        len / self.spec.hop + 1
    }

    /// `[B, 1, L] -> [B, bands, frames]` natural-log mel magnitudes.
    pub fn log_mel(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != 1 {
            return Err(input_err(format!("log-mel input must be [batch, 1, samples], got {s:?}")));
        }
        let (b, len) = (s[0], s[2]);
        let n = self.spec.fft_size;
        let bins = n / 2 + 1;
        let bands = self.spec.mel_bands;
        let nf = self.frames(len);
        let floor = T::of_f64(self.spec.log_floor);
        // cached per (batch, frame): spectrum and mel energy
        let mut specs = Vec::with_capacity(b * nf);
        let mut mels = Vec::with_capacity(b * nf * bands);
        let mut out = vec![T::zero(); b * bands * nf];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for bi in 0..b {
            let sig = &x.data()[bi * len..(bi + 1) * len];
            for f in 0..nf {
                self.load_frame(sig, f, &mut buf);
                self.fwd.process(&mut buf);
                let spec: Vec<Complex<T>> = buf[..bins].to_vec();
                let mag: Vec<T> = spec.iter().map(|c| (c.re * c.re + c.im * c.im + T::of_f64(MAG_EPS)).sqrt()).collect();
                for band in 0..bands {
                    let row = &self.fb[band * bins..(band + 1) * bins];
                    let e: T = row.iter().zip(&mag).map(|(w, m)| *w * *m).sum();
                    mels.push(e);
                    out[(bi * bands + band) * nf + f] = e.max(floor).ln();
                }
                specs.push(spec);
            }
        }
        let window = self.window.clone();
        let fb = self.fb.clone();
        let inv = self.inv.clone();
        let hop = self.spec.hop;
        Ok(Tensor::from_op(out, &[b, bands, nf], vec![x.clone()], move |_, g, _| {
            let mut gx = vec![T::zero(); b * len];
            let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
            let eps = T::of_f64(MAG_EPS);
            for bi in 0..b {
                for f in 0..nf {
                    let spec = &specs[bi * nf + f];
                    let mel = &mels[(bi * nf + f) * bands..(bi * nf + f + 1) * bands];
                    let mut g_mag = vec![T::zero(); bins];
                    for band in 0..bands {
                        if mel[band] <= floor {
                            continue;
                        }
                        let gm = g[(bi * bands + band) * nf + f] / mel[band];
                        for (k, w) in fb[band * bins..(band + 1) * bins].iter().enumerate() {
                            g_mag[k] += gm * *w;
                        }
                    }
                    buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
                    for k in 0..bins {
                        let c = spec[k];
                        let mag = (c.re * c.re + c.im * c.im + eps).sqrt();
                        buf[k] = Complex::new(g_mag[k] * c.re / mag, g_mag[k] * c.im / mag);
                    }
                    // d/dy[n] = sum_k g_re cos - g_im sin = Re(sum_k G[k] e^{+i 2 pi k n / N})
                    inv.process(&mut buf);
                    let start = (f * hop) as isize - (n / 2) as isize;
                    for i in 0..n {
                        let j = start + i as isize;
                        if j >= 0 && (j as usize) < len {
                            gx[bi * len + j as usize] += buf[i].re * window[i];
                        }
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    fn load_frame(&self, sig: &[T], f: usize, buf: &mut [Complex<T>]) {
        let n = self.spec.fft_size;
        let start = (f * self.spec.hop) as isize - (n / 2) as isize;
        for i in 0..n {
            let j = start + i as isize;
            let v = if j >= 0 && (j as usize) < sig.len() { sig[j as usize] } else { T::zero() };
            buf[i] = Complex::new(v * self.window[i], T::zero());
        }
    }

    /// Mean absolute difference of the log-mel spectrograms.
    pub fn distance(&self, x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != x_hat.shape() {
            return Err(input_err(format!("mel distance: shapes {:?} and {:?} differ", x.shape(), x_hat.shape())));
        }
        Ok(self.log_mel(x)?.l1_mean(&self.log_mel(x_hat)?))
    }
}
