//! WAV I/O, resampling and level normalization.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{input_err, Result};

/// Decoded mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Read a mono WAV (integer PCM of any width, or 32-bit float) to `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(input_err(format!("{}: {} channels, only mono is supported", path.display(), spec.channels)));
    }
    let samples = match spec.sample_format {
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<std::result::Result<Vec<_>, _>>()?
        }
        SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>()?,
    };
    Ok(Audio { samples, sample_rate: spec.sample_rate })
}

/// Read and bring to `rate` if needed.
pub fn read_wav_at(path: &Path, rate: u32) -> Result<Vec<f32>> {
    let a = read_wav(path)?;
    Ok(if a.sample_rate == rate { a.samples } else { resample(&a.samples, a.sample_rate, rate) })
}

/// Write 16-bit PCM mono, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn to_pcm16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Scale so the largest magnitude is 1. Silence is returned unchanged.
pub fn peak_normalize(x: &mut [f32]) {
    let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 && peak.is_finite() {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Zero crossings of the interpolation kernel on each side.
const SINC_ZEROS: f64 = 24.0;

/// Band-limited resampling with a Hann-windowed sinc kernel. The output has
/// `round(len * to / from)` samples; the cutoff sits just below the lower
/// of the two Nyquist frequencies.
pub fn resample(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let fc = 0.97 * ratio.min(1.0);
    let half = SINC_ZEROS / fc;
    let kernel = |u: f64| {
        if u.abs() >= half {
            return 0.0;
        }
        let s = if u == 0.0 { 1.0 } else { (PI * fc * u).sin() / (PI * fc * u) };
        let w = 0.5 + 0.5 * (PI * u / half).cos();
        fc * s * w
    };
    (0..out_len)
        .map(|i| {
            let t = i as f64 / ratio;
            let lo = (t - half).ceil().max(0.0) as usize;
            let hi = ((t + half).floor() as usize).min(x.len() - 1);
            (lo..=hi).map(|j| x[j] as f64 * kernel(t - j as f64)).sum::<f64>() as f32
        })
        .collect()
}
