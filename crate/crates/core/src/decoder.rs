//! Two-stage generator.
//!
//! The top stage upsamples long-term frames to the short-term frame rate.
//! Its output is concatenated with the short-term frames, mixed over a small
//! window of frames (the current frame plus look-ahead) and upsampled to the
//! waveform by the lower stage. Every convolution is causal and every
//! transposed convolution drops its overlapping tail, so output block `t`
//! depends on short-term frames up to `t + lookahead - 1` and on long-term
//! frames strictly before the block's superframe.

use rand::Rng;

use crate::config::DecoderConfig;
use crate::encoder::RepresentationSequence;
use crate::error::{config_err, input_err, Result};
use crate::nn::{self, join, Conv1d, ConvTranspose1d, Init, Module};
use crate::stream::{ConvStream, ConvTStream};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Short-term frames per long-term frame.
pub const SHORT_PER_LONG: usize = 8;

/// Parallel residual stacks, one per kernel size, whose outputs are summed.
/// Each stack runs `blocks x dilations` sub-blocks `y <- y + conv(lrelu(y))`.
pub struct Mrf<T: Float = f32> {
    pub stacks: Vec<Vec<Conv1d<T>>>,
    pub slope: f32,
}

impl<T: Float> Mrf<T> {
    pub fn new(channels: usize, cfg: &DecoderConfig, init: Init, rng: &mut impl Rng) -> Self {
        let stacks = cfg
            .mrf_kernels
            .iter()
            .map(|&k| {
                let mut convs = Vec::new();
                for _ in 0..cfg.mrf_blocks_per_kernel {
                    for &d in &cfg.mrf_dilations {
                        convs.push(Conv1d::new(channels, channels, k, ConvSpec::causal(k, 1, d), true, init, rng));
                    }
                }
                convs
            })
            .collect();
        Mrf { stacks, slope: cfg.lrelu_slope }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        mrf_apply(self, x)
    }
}

/// Sum over stacks of `x` refined by that stack's residual sub-blocks.
/// Length and channel count are preserved.
pub fn mrf_apply<T: Float>(mrf: &Mrf<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut out: Option<Tensor<T>> = None;
    for stack in &mrf.stacks {
        let mut y = x.clone();
        for conv in stack {
            y = y.add(&conv.forward(&y.leaky_relu(mrf.slope as f64)));
        }
        out = Some(match out {
            None => y,
            Some(acc) => acc.add(&y),
        });
    }
    out.unwrap_or_else(|| x.clone())
}

impl<T: Float> Module<T> for Mrf<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stacks.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stacks.visit_mut(prefix, f);
    }
}

pub struct Decoder<T: Float = f32> {
    pub cfg: DecoderConfig,
    pub rep_dim: usize,
    pub pre: Conv1d<T>,
    pub top_ups: Vec<ConvTranspose1d<T>>,
    pub top_mrfs: Vec<Mrf<T>>,
    /// Mixes `lookahead_short_frames` consecutive frames of
    /// `[top output; short-term frame]`.
    pub proj: Conv1d<T>,
    pub lower_ups: Vec<ConvTranspose1d<T>>,
    pub lower_mrfs: Vec<Mrf<T>>,
    pub post: Conv1d<T>,
}

impl<T: Float> Decoder<T> {
    pub fn new(cfg: &DecoderConfig, rep_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if rep_dim == 0 {
            return Err(config_err("rep_dim must be positive"));
        }
        let init = Init::FanIn(0.5 * cfg.init_gain as f64);
        let res_init = Init::FanIn(0.1 * cfg.init_gain as f64);
        let top_ch = cfg.top_channels();
        let low_ch = cfg.lower_channels();
        let pre = Conv1d::new(rep_dim, top_ch[0], cfg.pre_kernel, ConvSpec::causal(cfg.pre_kernel, 1, 1), true, init, rng);
        let mut top_ups = Vec::new();
        let mut top_mrfs = Vec::new();
        for (i, (&k, &s)) in cfg.top_filter_sizes.iter().zip(&cfg.top_upsample).enumerate() {
            top_ups.push(ConvTranspose1d::new(top_ch[i], top_ch[i + 1], k, s, init, rng));
            top_mrfs.push(Mrf::new(top_ch[i + 1], cfg, res_init, rng));
        }
        let la = cfg.lookahead_short_frames;
        let proj = Conv1d::new(top_ch[top_ch.len() - 1] + rep_dim, low_ch[0], la, ConvSpec::valid(1), true, init, rng);
        let mut lower_ups = Vec::new();
        let mut lower_mrfs = Vec::new();
        for (i, (&k, &s)) in cfg.lower_filter_sizes.iter().zip(&cfg.lower_upsample).enumerate() {
            lower_ups.push(ConvTranspose1d::new(low_ch[i], low_ch[i + 1], k, s, init, rng));
            lower_mrfs.push(Mrf::new(low_ch[i + 1], cfg, res_init, rng));
        }
        let post = Conv1d::new(
            low_ch[low_ch.len() - 1],
            1,
            cfg.post_kernel,
            ConvSpec::causal(cfg.post_kernel, 1, 1),
            true,
            init,
            rng,
        );
        Ok(Decoder { cfg: cfg.clone(), rep_dim, pre, top_ups, top_mrfs, proj, lower_ups, lower_mrfs, post })
    }

    pub fn samples_per_frame(&self) -> usize {
        self.cfg.lower_upsample.iter().product()
    }

    fn top_stage(&self, lsh: &Tensor<T>) -> Tensor<T> {
        let slope = self.cfg.lrelu_slope as f64;
        let mut h = self.pre.forward(lsh);
        for (up, mrf) in self.top_ups.iter().zip(&self.top_mrfs) {
            h = mrf.forward(&up.forward(&h.leaky_relu(slope)));
        }
        h
    }

    fn lower_stage(&self, mixed: &Tensor<T>) -> Tensor<T> {
        let slope = self.cfg.lrelu_slope as f64;
        let mut h = mixed.clone();
        for (up, mrf) in self.lower_ups.iter().zip(&self.lower_mrfs) {
            h = mrf.forward(&up.forward(&h.leaky_relu(slope)));
        }
        self.post.forward(&h.leaky_relu(slope)).tanh()
    }

    /// `c_l [B, D, M]`, `c_s [B, D, 8M]` to `[B, 1, 160 * 8M]` samples in
    /// `[-1, 1]`. Short-term frames past the end are taken as zero.
    pub fn forward(&self, c_l: &Tensor<T>, c_s: &Tensor<T>) -> Result<Tensor<T>> {
        if c_l.shape().len() != 3 || c_s.shape().len() != 3 {
            return Err(input_err("decoder inputs must be [batch, dim, frames]"));
        }
        let (b, d, m) = (c_l.dim(0), c_l.dim(1), c_l.dim(2));
        let n = c_s.dim(2);
        if c_s.dim(0) != b || d != self.rep_dim || c_s.dim(1) != self.rep_dim {
            return Err(input_err(format!(
                "decoder expects {}-dim frames, got {:?} and {:?}",
                self.rep_dim,
                c_l.shape(),
                c_s.shape()
            )));
        }
        if n != SHORT_PER_LONG * m {
            return Err(input_err(format!("{n} short-term frames do not match {m} long-term frames")));
        }
        let la = self.cfg.lookahead_short_frames;
        // block m is conditioned on long-term frame m - 1 (zeros for m = 0)
        let lsh = c_l.pad_time(1, 0);
        let top = self.top_stage(&lsh).slice_time(0, n + la - 1);
        let short = c_s.pad_time(0, la - 1);
        let mixed = self.proj.forward(&Tensor::cat_channels(&[top, short]));
        Ok(self.lower_stage(&mixed))
    }

    pub fn parameter_count(&self) -> usize {
        nn::parameter_count(self)
    }
}

impl<T: Float> Module<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.pre.visit(&join(prefix, "pre"), f);
        self.top_ups.visit(&join(prefix, "top_ups"), f);
        self.top_mrfs.visit(&join(prefix, "top_mrfs"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.lower_ups.visit(&join(prefix, "lower_ups"), f);
        self.lower_mrfs.visit(&join(prefix, "lower_mrfs"), f);
        self.post.visit(&join(prefix, "post"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.pre.visit_mut(&join(prefix, "pre"), f);
        self.top_ups.visit_mut(&join(prefix, "top_ups"), f);
        self.top_mrfs.visit_mut(&join(prefix, "top_mrfs"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.lower_ups.visit_mut(&join(prefix, "lower_ups"), f);
        self.lower_mrfs.visit_mut(&join(prefix, "lower_mrfs"), f);
        self.post.visit_mut(&join(prefix, "post"), f);
    }
}

pub fn decoder_parameter_count<T: Float>(dec: &Decoder<T>) -> usize {
    dec.parameter_count()
}

/// One-shot synthesis from quantized frames. Needs complete superframes.
pub fn synthesize(dec: &Decoder<f32>, c_l: &RepresentationSequence, c_s: &RepresentationSequence) -> Result<Vec<f32>> {
    if c_s.len() != SHORT_PER_LONG * c_l.len() {
        return Err(input_err(format!(
            "{} short-term frames do not form complete superframes with {} long-term frames",
            c_s.len(),
            c_l.len()
        )));
    }
    Ok(dec.forward(&c_l.to_tensor(), &c_s.to_tensor())?.to_vec())
}

fn lrelu_vec(x: &[f32], slope: f32) -> Vec<f32> {
    x.iter().map(|&v| if v > 0.0 { v } else { v * slope }).collect()
}

struct MrfStream {
    convs: Vec<Vec<ConvStream>>,
}

impl MrfStream {
    fn new(mrf: &Mrf<f32>) -> Self {
        MrfStream { convs: mrf.stacks.iter().map(|s| s.iter().map(ConvStream::new).collect()).collect() }
    }

    fn push(&mut self, mrf: &Mrf<f32>, x: &[f32], n: usize) -> Vec<f32> {
        let mut out: Option<Vec<f32>> = None;
        for (stack, states) in mrf.stacks.iter().zip(&mut self.convs) {
            let mut y = x.to_vec();
            for (conv, st) in stack.iter().zip(states.iter_mut()) {
                let (r, m) = st.push(conv, &lrelu_vec(&y, mrf.slope), n);
                debug_assert_eq!(m, n);
                y.iter_mut().zip(&r).for_each(|(a, b)| *a += *b);
            }
            out = Some(match out {
                None => y,
                Some(mut acc) => {
                    acc.iter_mut().zip(&y).for_each(|(a, b)| *a += *b);
                    acc
                }
            });
        }
        out.unwrap_or_else(|| x.to_vec())
    }
}

/// Frame-by-frame synthesis with a fixed look-ahead.
///
/// Output block `t` (160 samples) is released as soon as short-term frame
/// `t + lookahead - 1` has been pushed. Long-term frame `m` may be pushed
/// once short-term frame `8m` is known and must precede short-term frame
/// `8(m + 1)`. The concatenated output equals [`synthesize`] exactly once
/// [`flush`](Self::flush) supplies the trailing zero frames.
pub struct StreamingSynthesizer<'a> {
    dec: &'a Decoder<f32>,
    pre: ConvStream,
    top_ups: Vec<ConvTStream>,
    top_mrfs: Vec<MrfStream>,
    /// Top-stage outputs not yet consumed, `[channels][frames]`.
    top_pending: Vec<Vec<f32>>,
    short_pending: Vec<Vec<f32>>,
    proj: ConvStream,
    lower_ups: Vec<ConvTStream>,
    lower_mrfs: Vec<MrfStream>,
    post: ConvStream,
    short_count: usize,
    long_count: usize,
    flushed: bool,
}

impl<'a> StreamingSynthesizer<'a> {
    pub fn new(dec: &'a Decoder<f32>) -> Self {
        let top_c = dec.proj.c_in() - dec.rep_dim;
        let mut s = StreamingSynthesizer {
            dec,
            pre: ConvStream::new(&dec.pre),
            top_ups: dec.top_ups.iter().map(ConvTStream::new).collect(),
            top_mrfs: dec.top_mrfs.iter().map(MrfStream::new).collect(),
            top_pending: vec![Vec::new(); top_c],
            short_pending: vec![Vec::new(); dec.rep_dim],
            proj: ConvStream::new(&dec.proj),
            lower_ups: dec.lower_ups.iter().map(ConvTStream::new).collect(),
            lower_mrfs: dec.lower_mrfs.iter().map(MrfStream::new).collect(),
            post: ConvStream::new(&dec.post),
            short_count: 0,
            long_count: 0,
            flushed: false,
        };
        // conditioning for the first superframe
        let zeros = vec![0.0; dec.rep_dim];
        s.run_top(&zeros);
        s
    }

    /// Short-term frames pushed so far.
    pub fn short_frames(&self) -> usize {
        self.short_count
    }

    pub fn long_frames(&self) -> usize {
        self.long_count
    }

    fn run_top(&mut self, frame: &[f32]) {
        let dec = self.dec;
        let slope = dec.cfg.lrelu_slope;
        let (mut h, mut n) = self.pre.push(&dec.pre, frame, 1);
        for ((up, mrf), (us, ms)) in dec
            .top_ups
            .iter()
            .zip(&dec.top_mrfs)
            .zip(self.top_ups.iter_mut().zip(self.top_mrfs.iter_mut()))
        {
            let u = us.push(up, &lrelu_vec(&h, slope), n);
            n *= up.stride;
            h = ms.push(mrf, &u, n);
        }
        for (c, row) in self.top_pending.iter_mut().enumerate() {
            row.extend_from_slice(&h[c * n..(c + 1) * n]);
        }
    }

    pub fn push_long(&mut self, frame: &[f32]) -> Result<Vec<f32>> {
        if self.flushed {
            return Err(input_err("stream already flushed"));
        }
        if frame.len() != self.dec.rep_dim {
            return Err(input_err(format!("long-term frame has {} values, expected {}", frame.len(), self.dec.rep_dim)));
        }
        let m = self.long_count;
        if m > self.short_count / SHORT_PER_LONG {
            return Err(input_err(format!(
                "long-term frame {m} arrived before short-term frame {}",
                m * SHORT_PER_LONG
            )));
        }
        self.long_count += 1;
        self.run_top(frame);
        Ok(self.drain())
    }

    pub fn push_short(&mut self, frame: &[f32]) -> Result<Vec<f32>> {
        if self.flushed {
            return Err(input_err("stream already flushed"));
        }
        if frame.len() != self.dec.rep_dim {
            return Err(input_err(format!("short-term frame has {} values, expected {}", frame.len(), self.dec.rep_dim)));
        }
        let u = self.short_count;
        if self.long_count < u / SHORT_PER_LONG {
            return Err(input_err(format!(
                "short-term frame {u} needs long-term frame {} first",
                u / SHORT_PER_LONG - 1
            )));
        }
        self.push_short_unchecked(frame);
        Ok(self.drain())
    }

    fn push_short_unchecked(&mut self, frame: &[f32]) {
        for (row, &v) in self.short_pending.iter_mut().zip(frame) {
            row.push(v);
        }
        self.short_count += 1;
    }

    /// Release the final blocks by feeding zero look-ahead frames.
    pub fn flush(&mut self) -> Result<Vec<f32>> {
        if self.flushed {
            return Ok(Vec::new());
        }
        self.flushed = true;
        let zeros = vec![0.0; self.dec.rep_dim];
        for _ in 1..self.dec.cfg.lookahead_short_frames {
            self.push_short_unchecked(&zeros);
        }
        Ok(self.drain())
    }

    /// Feed every column for which both sources are present.
    fn drain(&mut self) -> Vec<f32> {
        let n = self.top_pending[0].len().min(self.short_pending[0].len());
        if n == 0 {
            return Vec::new();
        }
        let mut cols = Vec::with_capacity(self.dec.proj.c_in() * n);
        for row in self.top_pending.iter_mut().chain(self.short_pending.iter_mut()) {
            cols.extend(row.drain(..n));
        }
        let dec = self.dec;
        let slope = dec.cfg.lrelu_slope;
        let (mut h, mut m) = self.proj.push(&dec.proj, &cols, n);
        for ((up, mrf), (us, ms)) in dec
            .lower_ups
            .iter()
            .zip(&dec.lower_mrfs)
            .zip(self.lower_ups.iter_mut().zip(self.lower_mrfs.iter_mut()))
        {
            let u = us.push(up, &lrelu_vec(&h, slope), m);
            m *= up.stride;
            h = ms.push(mrf, &u, m);
        }
        let (y, _) = self.post.push(&dec.post, &lrelu_vec(&h, slope), m);
        y.into_iter().map(f32::tanh).collect()
    }
}

/// Short-term frames that must be pushed before the first sample appears.
pub fn frames_before_first_output(dec: &Decoder<f32>) -> Result<usize> {
    let mut s = StreamingSynthesizer::new(dec);
    let zero = vec![0.0; dec.rep_dim];
    for t in 0..SHORT_PER_LONG {
        if !s.push_short(&zero)?.is_empty() {
            return Ok(t + 1);
        }
    }
    Err(input_err("no output within one superframe"))
}

/// Algorithmic delay in samples measured by impulse position: an impulse
/// placed in short-term frame `t`, which is complete once input sample
/// `160 (t + 1) - 1` has arrived, first changes output sample `e`; the delay
/// is `160 (t + 1) - e`. The same is done for a long-term frame and the
/// larger value is returned.
pub fn impulse_delay_samples(dec: &Decoder<f32>, rng: &mut impl Rng) -> Result<usize> {
    let hop = dec.samples_per_frame();
    let m = 4;
    let d = dec.rep_dim;
    let base_l: Vec<f32> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let base_s: Vec<f32> = (0..SHORT_PER_LONG * m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let seq = |data: Vec<f32>, level, hop| RepresentationSequence { level, dim: d, hop, start_sample: hop - 1, data };
    let run = |l: &[f32], s: &[f32]| {
        synthesize(
            dec,
            &seq(l.to_vec(), crate::encoder::Level::LongTerm, hop * SHORT_PER_LONG),
            &seq(s.to_vec(), crate::encoder::Level::ShortTerm, hop),
        )
    };
    let reference = run(&base_l, &base_s)?;
    let first_diff = |out: &[f32]| out.iter().zip(&reference).position(|(a, b)| a != b);

    let t = 2 * SHORT_PER_LONG + 3;
    let mut s = base_s.clone();
    s[t * d..(t + 1) * d].iter_mut().for_each(|v| *v += 4.0);
    let e = first_diff(&run(&base_l, &s)?).ok_or_else(|| input_err("short-term impulse had no effect"))?;
    let short_delay = hop * (t + 1) - e;

    let lm = 1;
    let mut l = base_l.clone();
    l[lm * d..(lm + 1) * d].iter_mut().for_each(|v| *v += 4.0);
    let e = first_diff(&run(&l, &base_s)?).ok_or_else(|| input_err("long-term impulse had no effect"))?;
    let long_delay = (hop * SHORT_PER_LONG * (lm + 1)).saturating_sub(e);
    Ok(short_delay.max(long_delay))
}
