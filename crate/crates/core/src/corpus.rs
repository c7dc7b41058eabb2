//! Training corpus loading, plus a formant synthesizer that produces
//! speech-like material when no recorded corpus is at hand.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{peak_normalize, read_wav_at, write_wav};
use crate::error::{input_err, Result};

/// Peak-normalized mono signals at the codec rate, in file-name order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub signals: Vec<Vec<f32>>,
    pub names: Vec<PathBuf>,
}

impl Corpus {
    pub fn total_samples(&self) -> usize {
        self.signals.iter().map(Vec::len).sum()
    }

    /// Non-overlapping `len`-sample segments of every signal, shuffled by
    /// `seed`. Trailing partial segments are dropped.
    pub fn segments(&self, len: usize, seed: u64) -> Vec<Vec<f32>> {
        assert!(len > 0);
        let mut out: Vec<Vec<f32>> = self.signals.iter().flat_map(|s| s.chunks_exact(len).map(<[f32]>::to_vec)).collect();
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        out
    }
}

/// Every `.wav` below `path` (or `path` itself), resampled to `rate` and
/// peak-normalized. Unreadable files are skipped with a warning.
pub fn load_corpus(path: &Path, rate: u32) -> Result<Corpus> {
    if !path.exists() {
        return Err(input_err(format!("corpus path {} does not exist", path.display())));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(path)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    let mut corpus = Corpus::default();
    for f in files {
        match read_wav_at(&f, rate) {
            Ok(mut x) if !x.is_empty() => {
                peak_normalize(&mut x);
                corpus.signals.push(x);
                corpus.names.push(f);
            }
            Ok(_) => log::warn!("skipping empty file {}", f.display()),
            Err(e) => log::warn!("skipping {}: {e}", f.display()),
        }
    }
    if corpus.signals.is_empty() {
        return Err(input_err(format!("no readable audio under {}", path.display())));
    }
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn tag(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// Rough F1/F2/F3 targets (Hz) for a handful of vowels.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [390.0, 1990.0, 2550.0],
];

/// Two-pole resonator with unit gain at DC.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let r = (-PI * bw / rate).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / rate).cos();
        let a2 = -r * r;
        let g = 1.0 - a1 - a2;
        let y = g * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Source-filter speech: syllables of a glottal pulse train with jittered
/// pitch contour through three formant resonators, fricative noise bursts
/// and short pauses. Female voices get higher pitch and formants.
pub fn synth_speech(rng: &mut impl Rng, gender: Gender, samples: usize, rate: u32) -> Vec<f32> {
    let fs = rate as f64;
    let (f0_base, formant_scale) = match gender {
        Gender::Male => (rng.gen_range(95.0..135.0), 1.0),
        Gender::Female => (rng.gen_range(180.0..240.0), 1.17),
    };
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(samples);
    let mut res = [Resonator { y1: 0.0, y2: 0.0 }, Resonator { y1: 0.0, y2: 0.0 }, Resonator { y1: 0.0, y2: 0.0 }];
    let mut phase = 0.0f64;
    let mut prev = VOWELS[0];
    let mut hp_prev = 0.0;
    while out.len() < samples {
        let kind: f64 = rng.gen();
        let dur = (rng.gen_range(0.08..0.3) * fs) as usize;
        if kind < 0.1 {
            // pause with faint breath noise
            for _ in 0..dur / 2 {
                out.push(0.002 * noise.sample(rng) as f32);
            }
            continue;
        }
        if kind < 0.3 {
            // fricative: first-difference of noise, shaped envelope
            let amp = rng.gen_range(0.05..0.2);
            let n = dur / 2;
            for i in 0..n {
                let w = noise.sample(rng);
                let v = w - 0.9 * hp_prev;
                hp_prev = w;
                let env = (PI * i as f64 / n as f64).sin();
                out.push((amp * env * v) as f32);
            }
            continue;
        }
        let target = VOWELS[rng.gen_range(0..VOWELS.len())];
        let f0_start = f0_base * rng.gen_range(0.85..1.15);
        let f0_end = f0_base * rng.gen_range(0.8..1.2);
        let amp = rng.gen_range(0.3..1.0);
        for i in 0..dur {
            let u = i as f64 / dur as f64;
            // formant transition over the first third
            let blend = (u * 3.0).min(1.0);
            let f0 = (f0_start + (f0_end - f0_start) * u) * (1.0 + 0.01 * noise.sample(rng));
            phase += f0 / fs;
            let mut src = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                src = 1.0;
            }
            src += 0.02 * noise.sample(rng);
            let mut y = src;
            for (k, r) in res.iter_mut().enumerate() {
                let f = formant_scale * (prev[k] + (target[k] - prev[k]) * blend);
                y = r.step(y, f, 60.0 + 40.0 * k as f64, fs);
            }
            let env = (PI * u).sin().powf(0.6);
            out.push((amp * env * y) as f32);
        }
        prev = target;
    }
    out.truncate(samples);
    peak_normalize(&mut out);
    out.iter_mut().for_each(|v| *v *= 0.9);
    out
}

/// Write `files` utterances of `seconds` each, alternating male and female
/// voices, as `spk{i}_{gender}.wav`. Returns the written paths.
pub fn generate_corpus(dir: &Path, files: usize, seconds: f64, rate: u32, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate as f64).round() as usize;
    let mut paths = Vec::with_capacity(files);
    for i in 0..files {
        let g = if i % 2 == 0 { Gender::Male } else { Gender::Female };
        let x = synth_speech(&mut rng, g, n, rate);
        let p = dir.join(format!("spk{i:03}_{}.wav", g.tag()));
        write_wav(&p, &x, rate)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_files_thirty_segments() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(dir.path(), 3, 10.0, 16000, 1).unwrap();
        let c = load_corpus(dir.path(), 16000).unwrap();
        assert_eq!(c.signals.len(), 3);
        let segs = c.segments(16000, 5);
        assert_eq!(segs.len(), 30);
        assert_eq!(segs, c.segments(16000, 5));
        assert_ne!(segs, c.segments(16000, 6));
        for s in &c.signals {
            let peak = s.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn resampled_and_skipped_files() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f32> = (0..48000).map(|i| (i as f32 * 0.05).sin() * 0.5).collect();
        write_wav(&dir.path().join("hi.wav"), &x, 48000).unwrap();
        std::fs::write(dir.path().join("junk.wav"), b"not audio").unwrap();
        let c = load_corpus(dir.path(), 16000).unwrap();
        assert_eq!(c.signals.len(), 1);
        assert!((c.signals[0].len() as i64 - 16000).abs() <= 1);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path(), 16000).is_err());
        assert!(load_corpus(&dir.path().join("missing"), 16000).is_err());
    }

    #[test]
    fn synthetic_speech_is_bounded_and_voiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = synth_speech(&mut rng, Gender::Female, 16000, 16000);
        assert_eq!(x.len(), 16000);
        assert!(x.iter().all(|v| v.is_finite() && v.abs() <= 0.9 + 1e-6));
        let energy: f32 = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
        assert!(energy > 1e-3);
    }
}
