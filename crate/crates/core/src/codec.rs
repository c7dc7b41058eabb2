//! End-to-end codec: trained models, file-level and incremental encode and
//! decode, objective measurements and feature dumps.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{pack_stream, parse_header, payload_bitrate, unpack_stream, StreamHeader, HEADER_LEN, MAGIC, SHORT_PER_SUPERFRAME};
use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::corpus::{synth_speech, Gender};
use crate::decoder::{impulse_delay_samples, synthesize, Decoder, StreamingSynthesizer};
use crate::encoder::{Encoder, EncoderState, Level, RepresentationSequence};
use crate::error::{input_err, CodecError, Result};
use crate::losses::cc_distances;
use crate::mel::MelAnalyzer;
use crate::quantizer::{delta_decode, quantize_sequence, DeltaTracker, QuantizerSpec};
use crate::tensor::Tensor;
use crate::trainer::calibrate;

/// Everything needed to encode and decode.
pub struct CodecModel {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub quantizer: QuantizerSpec,
}

impl CodecModel {
    /// Untrained weights from `seed`, with steps calibrated on a few seconds
    /// of synthetic speech.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&cfg.codec, &mut rng)?;
        let decoder = Decoder::new(&cfg.decoder, cfg.codec.rep_dim, &mut rng)?;
        let probe = vec![synth_speech(&mut rng, Gender::Male, 32000, cfg.codec.sample_rate)];
        let quantizer = calibrate(&encoder, &probe, cfg.codec.step_multiplier, 1)?;
        Ok(CodecModel { cfg: cfg.clone(), encoder, decoder, quantizer })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = &ck.config;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = Encoder::new(&cfg.codec, &mut rng)?;
        let mut decoder = Decoder::new(&cfg.decoder, cfg.codec.rep_dim, &mut rng)?;
        ck.load_module("encoder", &mut encoder)?;
        if !ck.has_prefix("decoder") {
            return Err(CodecError::Checkpoint("checkpoint holds no decoder weights".into()));
        }
        ck.load_module("decoder", &mut decoder)?;
        let quantizer = ck
            .quantizer()?
            .ok_or_else(|| CodecError::Checkpoint("checkpoint has no calibrated quantizer".into()))?;
        Ok(CodecModel { cfg: cfg.clone(), encoder, decoder, quantizer })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.cfg, 0);
        ck.put_module("encoder", &self.encoder);
        ck.put_module("decoder", &self.decoder);
        ck.put_quantizer(&self.quantizer);
        ck
    }

    pub fn sample_rate(&self) -> u32 {
        self.cfg.codec.sample_rate
    }

    /// Whole-signal encode to a coded stream.
    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        let (c_s, c_l) = self.encoder.encode_all(x, self.sample_rate())?;
        let q = &self.quantizer;
        let (bits_s, _) = quantize_sequence(&c_s, q.step_short, q.init_value)?;
        let (bits_l, _) = quantize_sequence(&c_l, q.step_long, q.init_value)?;
        pack_stream(&bits_s, &bits_l, q, &self.cfg.codec)
    }

    fn check_header(&self, h: &StreamHeader) -> Result<()> {
        if h.sample_rate != self.sample_rate() || h.rep_dim as usize != self.cfg.codec.rep_dim {
            return Err(input_err(format!(
                "stream is {} Hz / {} features, model is {} Hz / {} features",
                h.sample_rate,
                h.rep_dim,
                self.sample_rate(),
                self.cfg.codec.rep_dim
            )));
        }
        Ok(())
    }

    /// Dequantized frames of both levels, `(short, long)`.
    pub fn dequantize(&self, bytes: &[u8]) -> Result<(RepresentationSequence, RepresentationSequence)> {
        let bits = unpack_stream(bytes)?;
        self.check_header(&bits.header)?;
        let q = bits.header.quantizer();
        let dim = self.cfg.codec.rep_dim;
        let (hs, hl) = (self.cfg.codec.lower_hop(), self.cfg.codec.upper_hop());
        let s = RepresentationSequence {
            level: Level::ShortTerm,
            dim,
            hop: hs,
            start_sample: hs - 1,
            data: delta_decode(&bits.bits_short, dim, q.step_short, q.init_value)?,
        };
        let l = RepresentationSequence {
            level: Level::LongTerm,
            dim,
            hop: hl,
            start_sample: hl - 1,
            data: delta_decode(&bits.bits_long, dim, q.step_long, q.init_value)?,
        };
        Ok((s, l))
    }

    /// Whole-stream decode: `160` samples per short-term frame.
    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<f32>> {
        let (s, l) = self.dequantize(bytes)?;
        if l.is_empty() {
            return Ok(Vec::new());
        }
        synthesize(&self.decoder, &l, &s)
    }
}

/// Incremental encoder: samples in, complete superframes out. The first
/// output carries the stream header.
pub struct StreamEncoder<'a> {
    model: &'a CodecModel,
    state: EncoderState,
    short: DeltaTracker,
    long: DeltaTracker,
    pending_short: Vec<bool>,
    pending_long: Vec<bool>,
    header_sent: bool,
}

impl<'a> StreamEncoder<'a> {
    pub fn new(model: &'a CodecModel) -> Result<Self> {
        let q = &model.quantizer;
        let dim = model.cfg.codec.rep_dim;
        Ok(StreamEncoder {
            model,
            state: model.encoder.new_state(),
            short: DeltaTracker::new(dim, q.step_short, q.init_value)?,
            long: DeltaTracker::new(dim, q.step_long, q.init_value)?,
            pending_short: Vec::new(),
            pending_long: Vec::new(),
            header_sent: false,
        })
    }

    pub fn push(&mut self, x: &[f32]) -> Result<Vec<u8>> {
        let m = self.model;
        let (c_s, c_l) = m.encoder.encode(x, m.sample_rate(), &mut self.state)?;
        for t in 0..c_s.len() {
            self.short.encode_frame(c_s.frame(t), &mut self.pending_short);
        }
        for t in 0..c_l.len() {
            self.long.encode_frame(c_l.frame(t), &mut self.pending_long);
        }
        let dim = m.cfg.codec.rep_dim;
        let ready = (self.pending_long.len() / dim).min(self.pending_short.len() / (dim * SHORT_PER_SUPERFRAME));
        let ns = ready * dim * SHORT_PER_SUPERFRAME;
        let nl = ready * dim;
        let packed = pack_stream(&self.pending_short[..ns], &self.pending_long[..nl], &m.quantizer, &m.cfg.codec)?;
        self.pending_short.drain(..ns);
        self.pending_long.drain(..nl);
        let skip = if self.header_sent { HEADER_LEN } else { 0 };
        self.header_sent = true;
        Ok(packed[skip..].to_vec())
    }

    /// Remaining output; a trailing partial superframe is dropped.
    pub fn finish(mut self) -> Result<Vec<u8>> {
        if self.header_sent {
            return Ok(Vec::new());
        }
        self.push(&[])
    }
}

/// Incremental decoder: bytes in, samples out as soon as the synthesizer's
/// look-ahead allows.
pub struct StreamDecoder<'a> {
    model: &'a CodecModel,
    buf: Vec<u8>,
    consumed: usize,
    header: Option<StreamHeader>,
    short: Option<DeltaTracker>,
    long: Option<DeltaTracker>,
    synth: StreamingSynthesizer<'a>,
}

impl<'a> StreamDecoder<'a> {
    pub fn new(model: &'a CodecModel) -> Self {
        StreamDecoder {
            model,
            buf: Vec::new(),
            consumed: 0,
            header: None,
            short: None,
            long: None,
            synth: StreamingSynthesizer::new(&model.decoder),
        }
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<f32>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        if self.header.is_none() {
            if self.buf.len() < HEADER_LEN {
                if self.buf.len() >= MAGIC.len() && self.buf[..MAGIC.len()] != MAGIC {
                    parse_header(&self.buf)?;
                }
                return Ok(out);
            }
            let h = parse_header(&self.buf[..HEADER_LEN])?;
            self.model.check_header(&h)?;
            let q = h.quantizer();
            let dim = h.rep_dim as usize;
            self.short = Some(DeltaTracker::new(dim, q.step_short, q.init_value)?);
            self.long = Some(DeltaTracker::new(dim, q.step_long, q.init_value)?);
            self.header = Some(h);
            self.buf.drain(..HEADER_LEN);
            self.consumed = HEADER_LEN;
        }
        let h = self.header.expect("header parsed");
        let sf = h.superframe_bytes();
        let dim = h.rep_dim as usize;
        while self.buf.len() >= sf {
            let bits: Vec<bool> = self.buf[..sf].iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1)).collect();
            self.buf.drain(..sf);
            self.consumed += sf;
            let long = self.long.as_mut().expect("trackers").decode_frame(&bits[..dim]).to_vec();
            out.extend(self.synth.push_long(&long)?);
            for t in 0..SHORT_PER_SUPERFRAME {
                let f = self.short.as_mut().expect("trackers").decode_frame(&bits[dim * (t + 1)..dim * (t + 2)]).to_vec();
                out.extend(self.synth.push_short(&f)?);
            }
        }
        Ok(out)
    }

    /// Flush the look-ahead. Errors if the stream ended mid-header or
    /// mid-superframe.
    pub fn finish(mut self) -> Result<Vec<f32>> {
        let Some(h) = self.header else {
            return Err(CodecError::Stream {
                offset: self.buf.len(),
                reason: format!("truncated header: {} of {HEADER_LEN} bytes", self.buf.len()),
            });
        };
        if !self.buf.is_empty() {
            return Err(CodecError::Stream {
                offset: self.consumed,
                reason: format!("truncated superframe: {} of {} bytes", self.buf.len(), h.superframe_bytes()),
            });
        }
        if self.synth.long_frames() == 0 {
            return Ok(Vec::new());
        }
        self.synth.flush()
    }
}

/// Objective figures for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub mel_distance: f64,
    pub cc_distance_short: f64,
    pub cc_distance_long: f64,
    pub payload_bitrate: f64,
    pub algorithmic_delay_ms: f64,
    pub realtime_factor: f64,
}

impl ObjectiveReport {
    pub fn to_text(&self) -> String {
        format!(
            "mel_distance = {:.5}\ncc_distance_short = {:.5}\ncc_distance_long = {:.5}\npayload_bitrate = {} bps\nalgorithmic_delay = {:.1} ms\nrealtime_factor = {:.2}\n",
            self.mel_distance,
            self.cc_distance_short,
            self.cc_distance_long,
            self.payload_bitrate,
            self.algorithmic_delay_ms,
            self.realtime_factor
        )
    }
}

/// Distances on `reference` (synthetic speech if `None`), delay from the
/// impulse probe and real-time factor from coding `timing_seconds` of audio.
pub fn measure(model: &CodecModel, reference: Option<&[f32]>, timing_seconds: f64) -> Result<ObjectiveReport> {
    let sr = model.sample_rate();
    let sf = model.cfg.codec.upper_hop();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let owned;
    let x = match reference {
        Some(x) => x,
        None => {
            owned = synth_speech(&mut rng, Gender::Female, 4 * sr as usize, sr);
            &owned
        }
    };
    let n = x.len() / sf * sf;
    if n == 0 {
        return Err(input_err("reference signal is shorter than one superframe"));
    }
    let x = &x[..n];
    let y = model.decode(&model.encode(x)?)?;
    let xt = Tensor::new(x.to_vec(), &[1, 1, n]);
    let yt = Tensor::new(y, &[1, 1, n]);
    let mel = MelAnalyzer::new(&model.cfg.mel)?.distance(&xt, &yt)?.item() as f64;
    let (cs, cl) = cc_distances(&model.encoder, &xt, &yt)?;

    let delay = impulse_delay_samples(&model.decoder, &mut rng)?;
    let timing_len = ((timing_seconds * sr as f64) as usize).max(sf);
    let probe = synth_speech(&mut rng, Gender::Male, timing_len, sr);
    let t0 = Instant::now();
    let mut enc = StreamEncoder::new(model)?;
    let mut dec = StreamDecoder::new(model);
    for chunk in probe.chunks(sf) {
        let bytes = enc.push(chunk)?;
        dec.push(&bytes)?;
    }
    dec.push(&enc.finish()?)?;
    dec.finish()?;
    let elapsed = t0.elapsed().as_secs_f64().max(1e-9);
    Ok(ObjectiveReport {
        mel_distance: mel,
        cc_distance_short: cs.item() as f64,
        cc_distance_long: cl.item() as f64,
        payload_bitrate: payload_bitrate(&model.cfg.codec),
        algorithmic_delay_ms: delay as f64 * 1000.0 / sr as f64,
        realtime_factor: timing_len as f64 / sr as f64 / elapsed,
    })
}

pub const FEATURES_HEADER: &str = "time,level,feature,raw,quantized";

/// One row per frame and feature. `time` is the frame's last input sample
/// in seconds.
pub fn dump_features(model: &CodecModel, x: &[f32]) -> Result<String> {
    let (c_s, c_l) = model.encoder.encode_all(x, model.sample_rate())?;
    let q = &model.quantizer;
    let (_, qs) = quantize_sequence(&c_s, q.step_short, q.init_value)?;
    let (_, ql) = quantize_sequence(&c_l, q.step_long, q.init_value)?;
    let mut out = String::new();
    out.push_str(FEATURES_HEADER);
    out.push('\n');
    let sr = model.sample_rate() as f64;
    for (raw, quant, name) in [(&c_s, &qs, "short"), (&c_l, &ql, "long")] {
        for t in 0..raw.len() {
            let time = (raw.start_sample + t * raw.hop) as f64 / sr;
            for (k, (a, b)) in raw.frame(t).iter().zip(quant.frame(t)).enumerate() {
                let _ = writeln!(out, "{time:.5},{name},{k},{a},{b}");
            }
        }
    }
    Ok(out)
}
