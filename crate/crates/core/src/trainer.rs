//! Encoder pretraining, quantizer calibration and adversarial decoder
//! training.
//!
//! Every step draws its randomness from a generator keyed by `(seed, step)`,
//! so a run resumed from a checkpoint replays the uninterrupted run exactly.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::decoder::Decoder;
use crate::discriminators::Discriminators;
use crate::encoder::Encoder;
use crate::error::{config_err, input_err, CodecError, Result};
use crate::losses::{cc_distances, feature_matching, features, lsgan_d_loss, lsgan_g_loss, scores, total_generator_loss};
use crate::mel::MelAnalyzer;
use crate::nn;
use crate::optim::Adam;
use crate::quantizer::{calibrate_steps, delta_encode, QuantizerSpec};
use crate::tensor::Tensor;

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const DECODER_STREAM: u64 = 0x4445_434f;

/// Generator for one step of one phase.
pub fn step_rng(seed: u64, phase: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ phase);
    rng.set_stream(step);
    rng
}

/// `batch` segments drawn uniformly with replacement, as `[batch, 1, len]`.
pub fn sample_batch(segments: &[Vec<f32>], batch: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    if segments.is_empty() {
        return Err(input_err("no training segments"));
    }
    let len = segments[0].len();
    let mut data = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let s = &segments[rng.gen_range(0..segments.len())];
        if s.len() != len {
            return Err(input_err("training segments differ in length"));
        }
        data.extend_from_slice(s);
    }
    Ok(Tensor::new(data, &[batch, 1, len]))
}

fn check_finite(step: u64, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CodecError::Diverged { step, reason: format!("{name} is {v}") })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainMetrics {
    pub step: u64,
    pub loss: f64,
    pub accuracy_short: Option<f64>,
    pub accuracy_long: Option<f64>,
}

/// Contrastive pretraining of the encoder.
pub struct EncoderTrainer {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub opt: Adam,
    pub step: u64,
}

impl EncoderTrainer {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let encoder = Encoder::new(&cfg.codec, &mut rng)?;
        let t = &cfg.train;
        Ok(EncoderTrainer { cfg: cfg.clone(), encoder, opt: Adam::new(t.pretrain_lr, t.adam_beta1, t.adam_beta2), step: 0 })
    }

    pub fn step(&mut self, segments: &[Vec<f32>]) -> Result<PretrainMetrics> {
        let t = &self.cfg.train;
        let mut rng = step_rng(t.seed, PRETRAIN_STREAM, self.step);
        let x = sample_batch(segments, t.pretrain_batch_size, &mut rng)?;
        let out = self
            .encoder
            .pretrain_loss(&x, &mut rng)
            .ok_or_else(|| input_err("pretraining segments are too short to form contrastive pairs"))?;
        let loss = out.loss.item() as f64;
        check_finite(self.step, "contrastive loss", loss)?;
        let grads = out.loss.backward();
        self.opt.step(&mut self.encoder, &grads);
        self.step += 1;
        Ok(PretrainMetrics { step: self.step, loss, accuracy_short: out.accuracy_short, accuracy_long: out.accuracy_long })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.cfg, self.step);
        ck.put_module("encoder", &self.encoder);
        ck.put_optimizer("opt_enc", &self.opt);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut tr = Self::new(&ck.config)?;
        ck.load_module("encoder", &mut tr.encoder)?;
        ck.load_optimizer("opt_enc", &mut tr.opt)?;
        tr.step = ck.step;
        Ok(tr)
    }
}

/// Mean contrastive accuracy per level over `batches` fresh batches,
/// without updating the encoder.
pub fn evaluate_nce(enc: &Encoder, segments: &[Vec<f32>], batches: usize, batch_size: usize, seed: u64) -> Result<(f64, f64)> {
    let (mut s, mut l, mut ns, mut nl) = (0.0, 0.0, 0usize, 0usize);
    for b in 0..batches {
        let mut rng = step_rng(seed, PRETRAIN_STREAM ^ 0xe7a1, b as u64);
        let x = sample_batch(segments, batch_size, &mut rng)?;
        if let Some(out) = enc.pretrain_loss(&x, &mut rng) {
            if let Some(a) = out.accuracy_short {
                s += a;
                ns += 1;
            }
            if let Some(a) = out.accuracy_long {
                l += a;
                nl += 1;
            }
        }
    }
    if ns == 0 || nl == 0 {
        return Err(input_err("evaluation segments too short for both levels"));
    }
    Ok((s / ns as f64, l / nl as f64))
}

/// Step sizes from unquantized features of up to `max_segments` segments.
pub fn calibrate(enc: &Encoder, segments: &[Vec<f32>], multiplier: f32, max_segments: usize) -> Result<QuantizerSpec> {
    let mut short = Vec::new();
    let mut long = Vec::new();
    for seg in segments.iter().take(max_segments) {
        let (s, l) = enc.encode_all(seg, enc.cfg.sample_rate)?;
        short.push(s);
        long.push(l);
    }
    calibrate_steps(&short, &long, multiplier)
}

/// Quantize `[B, D, N]` features per batch item, each from the initial
/// reconstruction value.
pub fn quantize_batch(c: &Tensor<f32>, step: f32, init: f32) -> Result<Tensor<f32>> {
    let (b, d, n) = (c.dim(0), c.dim(1), c.dim(2));
    let mut out = vec![0.0; b * d * n];
    for bi in 0..b {
        let item = &c.data()[bi * d * n..(bi + 1) * d * n];
        let frames: Vec<f32> = (0..n).flat_map(|t| (0..d).map(move |k| item[k * n + t])).collect();
        let coded = delta_encode(&frames, d, step, init)?;
        for t in 0..n {
            for k in 0..d {
                out[bi * d * n + k * n + t] = coded.recon[t * d + k];
            }
        }
    }
    Ok(Tensor::new(out, &[b, d, n]))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub step: u64,
    pub d_loss: f32,
    pub g_adv: f32,
    pub cc_s: f32,
    pub cc_l: f32,
    pub mel: f32,
    pub fm: f32,
    pub total: f32,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "step,d_loss,g_adv,cc_s,cc_l,mel,fm,total,wall_time";

impl TrainMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.step, self.d_loss, self.g_adv, self.cc_s, self.cc_l, self.mel, self.fm, self.total, self.wall_time
        )
    }

    /// Same value as `total`, recomputed from the components.
    pub fn recomputed_total(&self, cfg: &ModelConfig) -> f32 {
        cfg.loss.total(self.g_adv, self.cc_s, self.cc_l, self.mel, self.fm)
    }
}

/// Frozen encoder, generator, discriminators and both optimizers.
pub struct DecoderTrainer {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub quantizer: QuantizerSpec,
    pub decoder: Decoder,
    pub disc: Discriminators,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub mel: MelAnalyzer<f32>,
    pub step: u64,
    started: Instant,
    elapsed_before: f64,
}

impl DecoderTrainer {
    pub fn new(cfg: &ModelConfig, mut encoder: Encoder, quantizer: QuantizerSpec) -> Result<Self> {
        cfg.validate()?;
        quantizer.validate()?;
        if encoder.cfg != cfg.codec {
            return Err(config_err("encoder was built for a different codec configuration"));
        }
        nn::set_requires_grad(&mut encoder, false);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ DECODER_STREAM);
        let decoder = Decoder::new(&cfg.decoder, cfg.codec.rep_dim, &mut rng)?;
        let disc = Discriminators::new(&cfg.disc, &mut rng)?;
        let t = &cfg.train;
        Ok(DecoderTrainer {
            cfg: cfg.clone(),
            encoder,
            quantizer,
            decoder,
            disc,
            opt_g: Adam::new(t.generator_lr, t.adam_beta1, t.adam_beta2),
            opt_d: Adam::new(t.discriminator_lr, t.adam_beta1, t.adam_beta2),
            mel: MelAnalyzer::new(&cfg.mel)?,
            step: 0,
            started: Instant::now(),
            elapsed_before: 0.0,
        })
    }

    /// Generator input for a waveform batch: quantized features of both levels.
    pub fn quantized_features(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let out = self.encoder.forward(x);
        let q = &self.quantizer;
        Ok((quantize_batch(&out.c_l, q.step_long, q.init_value)?, quantize_batch(&out.c_s, q.step_short, q.init_value)?))
    }

    /// One discriminator update, then one generator update.
    pub fn step(&mut self, segments: &[Vec<f32>]) -> Result<TrainMetrics> {
        let t = &self.cfg.train;
        let mut rng = step_rng(t.seed, DECODER_STREAM, self.step);
        let x = sample_batch(segments, t.batch_size, &mut rng)?;
        let step = self.step;
        let (c_l, c_s) = self.quantized_features(&x)?;

        let x_hat = self.decoder.forward(&c_l, &c_s)?;
        let fake_d = self.disc.forward(&x_hat.detach())?;
        let real_d = self.disc.forward(&x)?;
        let d_loss = lsgan_d_loss(&scores(&real_d), &scores(&fake_d))?;
        let d_val = d_loss.item();
        check_finite(step, "d_loss", d_val as f64)?;
        let grads = d_loss.backward();
        self.opt_d.step(&mut self.disc, &grads);

        let real = self.disc.forward(&x)?;
        let fake = self.disc.forward(&x_hat)?;
        let adv = lsgan_g_loss(&scores(&fake));
        let real_feats: Vec<Vec<Tensor<f32>>> = features(&real).into_iter().map(|l| l.iter().map(Tensor::detach).collect()).collect();
        let fm = feature_matching(&real_feats, &features(&fake))?;
        let (cc_s, cc_l) = cc_distances(&self.encoder, &x, &x_hat)?;
        let mel = self.mel.distance(&x, &x_hat)?;
        let total = total_generator_loss(&adv, &cc_s, &cc_l, &mel, &fm, &self.cfg.loss);
        let m = TrainMetrics {
            step: step + 1,
            d_loss: d_val,
            g_adv: adv.item(),
            cc_s: cc_s.item(),
            cc_l: cc_l.item(),
            mel: mel.item(),
            fm: fm.item(),
            total: total.item(),
            wall_time: self.elapsed_before + self.started.elapsed().as_secs_f64(),
        };
        for (name, v) in [("g_adv", m.g_adv), ("cc_s", m.cc_s), ("cc_l", m.cc_l), ("mel", m.mel), ("fm", m.fm), ("total", m.total)] {
            check_finite(step, name, v as f64)?;
        }
        let grads = total.backward();
        self.opt_g.step(&mut self.decoder, &grads);
        self.step += 1;
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.cfg, self.step);
        ck.put_module("encoder", &self.encoder);
        ck.put_quantizer(&self.quantizer);
        ck.put_module("decoder", &self.decoder);
        ck.put_module("disc", &self.disc);
        ck.put_optimizer("opt_g", &self.opt_g);
        ck.put_optimizer("opt_d", &self.opt_d);
        ck.arrays.insert("train.wall_time".into(), (vec![1], vec![self.elapsed_before as f32 + self.started.elapsed().as_secs_f32()]));
        ck
    }

    /// Restore a run saved by [`to_checkpoint`](Self::to_checkpoint).
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = Encoder::new(&ck.config.codec, &mut rng)?;
        ck.load_module("encoder", &mut encoder)?;
        let q = ck.quantizer()?.ok_or_else(|| CodecError::Checkpoint("checkpoint has no quantizer steps".into()))?;
        let mut tr = Self::new(&ck.config, encoder, q)?;
        ck.load_module("decoder", &mut tr.decoder)?;
        ck.load_module("disc", &mut tr.disc)?;
        ck.load_optimizer("opt_g", &mut tr.opt_g)?;
        ck.load_optimizer("opt_d", &mut tr.opt_d)?;
        tr.elapsed_before = ck.arrays.get("train.wall_time").map_or(0.0, |(_, v)| v[0] as f64);
        tr.step = ck.step;
        Ok(tr)
    }
}

/// Appends CSV rows, writing the header to new files.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}")?;
        }
        Ok(MetricsLog { file })
    }

    pub fn append(&mut self, m: &TrainMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.csv_row())?;
        Ok(())
    }
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.dir.join(format!("step{step:07}.ckpt"))
    }

    pub fn latest(&self) -> PathBuf {
        self.dir.join("latest.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

/// Train the decoder up to `cfg.train.total_steps`, logging every step and
/// checkpointing at the configured interval. On divergence the error names
/// the last good checkpoint.
pub fn train_decoder(tr: &mut DecoderTrainer, segments: &[Vec<f32>], paths: &RunPaths) -> Result<Vec<TrainMetrics>> {
    std::fs::create_dir_all(&paths.dir)?;
    let mut log = MetricsLog::open(&paths.metrics())?;
    let mut history = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    while tr.step < tr.cfg.train.total_steps {
        let m = match tr.step(segments) {
            Ok(m) => m,
            Err(CodecError::Diverged { step, reason }) => {
                let at = last_good.map_or("none".to_string(), |p| p.display().to_string());
                return Err(CodecError::Diverged { step, reason: format!("{reason}; last good checkpoint: {at}") });
            }
            Err(e) => return Err(e),
        };
        log.append(&m)?;
        if tr.cfg.train.log_interval > 0 && m.step % tr.cfg.train.log_interval == 0 {
            log::info!(
                "step {} d {:.4} adv {:.4} cc_s {:.4} cc_l {:.4} mel {:.4} fm {:.4} total {:.4}",
                m.step,
                m.d_loss,
                m.g_adv,
                m.cc_s,
                m.cc_l,
                m.mel,
                m.fm,
                m.total
            );
        }
        if tr.cfg.train.checkpoint_interval > 0 && m.step % tr.cfg.train.checkpoint_interval == 0 {
            let ck = tr.to_checkpoint();
            let p = paths.checkpoint(m.step);
            ck.save(&p)?;
            ck.save(&paths.latest())?;
            last_good = Some(p);
        }
        history.push(m);
    }
    tr.to_checkpoint().save(&paths.latest())?;
    Ok(history)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{synth_speech, Gender};

    pub(crate) fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk();
        cfg.codec.conv_hidden = 16;
        cfg.codec.rep_dim = 8;
        cfg.codec.nce_horizon_lower = 3;
        cfg.codec.nce_horizon_upper = 2;
        cfg.decoder.top_initial_channels = 16;
        cfg.decoder.lower_initial_channels = 32;
        cfg.decoder.mrf_kernels = vec![3];
        cfg.decoder.mrf_blocks_per_kernel = 1;
        cfg.decoder.mrf_dilations = vec![1];
        cfg.disc.msd_channels = vec![4, 8, 8, 8];
        cfg.disc.msd_groups = vec![1, 2, 2, 2];
        cfg.disc.mpd_channels = vec![4, 4, 4, 4, 4];
        cfg.mel.mel_bands = 20;
        cfg.mel.fft_size = 256;
        cfg.mel.window = 256;
        cfg.train.segment_length = 2560;
        cfg.train.batch_size = 2;
        cfg.train.pretrain_batch_size = 2;
        cfg.train.pretrain_segment_length = 10240;
        cfg
    }

    fn segments(n: usize, len: usize) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n).map(|i| synth_speech(&mut rng, if i % 2 == 0 { Gender::Male } else { Gender::Female }, len, 16000)).collect()
    }

    #[test]
    fn pretrain_steps_are_deterministic() {
        let cfg = tiny_cfg();
        let segs = segments(4, cfg.train.pretrain_segment_length);
        let run = || {
            let mut tr = EncoderTrainer::new(&cfg).unwrap();
            (0..2).map(|_| tr.step(&segs).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|m| m.loss.is_finite()));
    }

    #[test]
    fn decoder_step_keeps_encoder_and_resumes_exactly() {
        let cfg = tiny_cfg();
        let pre = segments(4, cfg.train.pretrain_segment_length);
        let segs = segments(4, cfg.train.segment_length);
        let enc = EncoderTrainer::new(&cfg).unwrap().encoder;
        let q = calibrate(&enc, &pre, 1.0, 4).unwrap();
        let mut tr = DecoderTrainer::new(&cfg, enc, q).unwrap();
        let before = nn::snapshot(&tr.encoder);
        let m1 = tr.step(&segs).unwrap();
        assert_eq!(m1.total, m1.recomputed_total(&cfg));
        assert_eq!(nn::snapshot(&tr.encoder), before);
        let ck = Checkpoint::from_bytes(&tr.to_checkpoint().to_bytes()).unwrap();
        let m2 = tr.step(&segs).unwrap();
        let mut resumed = DecoderTrainer::from_checkpoint(&ck).unwrap();
        let r2 = resumed.step(&segs).unwrap();
        assert_eq!((r2.step, r2.d_loss, r2.total, r2.mel), (m2.step, m2.d_loss, m2.total, m2.mel));
        assert_eq!(nn::snapshot(&resumed.decoder), nn::snapshot(&tr.decoder));
    }

    #[test]
    fn quantize_batch_matches_per_item_encoding() {
        let c = Tensor::new((0..2 * 3 * 5).map(|i| ((i * 7) % 11) as f32 * 0.1).collect(), &[2, 3, 5]);
        let q = quantize_batch(&c, 0.25, 0.0).unwrap();
        for bi in 0..2 {
            for k in 0..3 {
                let row: Vec<f32> = (0..5).map(|t| c.data()[bi * 15 + k * 5 + t]).collect();
                let want = delta_encode(&row, 1, 0.25, 0.0).unwrap().recon;
                assert_eq!(&q.data()[bi * 15 + k * 5..bi * 15 + k * 5 + 5], want.as_slice());
            }
        }
    }

    #[test]
    fn metrics_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut log = MetricsLog::open(&p).unwrap();
        let m = TrainMetrics { step: 1, d_loss: 0.5, g_adv: 1.0, cc_s: 0.0, cc_l: 0.0, mel: 2.0, fm: 0.5, total: 102.0, wall_time: 0.25 };
        log.append(&m).unwrap();
        drop(log);
        MetricsLog::open(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n1,0.5,1,0,0,2,0.5,102,0.250\n"));
    }
}
