//! Causal two-level encoder.
//!
//! The lower level turns 16 kHz samples into 100 Hz frames with five strided
//! causal convolutions followed by a GRU; the upper level downsamples the
//! lower convolutional latent by eight and runs its own GRU. Each level also
//! owns bilinear prediction heads used only for contrastive pretraining.

use rand::Rng;

use crate::config::CodecConfig;
use crate::error::{config_err, input_err, Result};
use crate::nn::{self, join, Conv1d, Gru, Init, Module};
use crate::stream::ConvStream;
use crate::tensor::kernels;
use crate::tensor::{ConvSpec, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    ShortTerm,
    LongTerm,
}

/// Frame-major feature sequence at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSequence {
    pub level: Level,
    pub dim: usize,
    /// Samples per frame.
    pub hop: usize,
    /// Index of the last input sample frame 0 depends on.
    pub start_sample: usize,
    /// `[frames, dim]`, row-major.
    pub data: Vec<f32>,
}

impl RepresentationSequence {
    pub fn empty(level: Level, dim: usize, hop: usize, start_sample: usize) -> Self {
        RepresentationSequence { level, dim, hop, start_sample, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Append the frames of `other`, which must continue this sequence.
    pub fn extend(&mut self, other: &RepresentationSequence) {
        debug_assert_eq!(self.dim, other.dim);
        if self.is_empty() {
            self.start_sample = other.start_sample;
        }
        self.data.extend_from_slice(&other.data);
    }

    /// Channel-major `[1, dim, frames]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let n = self.len();
        let mut out = vec![0.0; n * self.dim];
        for t in 0..n {
            for d in 0..self.dim {
                out[d * n + t] = self.data[t * self.dim + d];
            }
        }
        Tensor::new(out, &[1, self.dim, n])
    }
}

/// Weights of both levels plus the pretraining heads.
pub struct Encoder<T: Float = f32> {
    pub cfg: CodecConfig,
    pub lower_convs: Vec<Conv1d<T>>,
    pub lower_gru: Gru<T>,
    pub upper_convs: Vec<Conv1d<T>>,
    pub upper_gru: Gru<T>,
    /// Per-horizon `[conv_hidden, rep_dim]` maps from context to predicted latent.
    pub lower_heads: Vec<Tensor<T>>,
    pub upper_heads: Vec<Tensor<T>>,
}

/// Activations of one forward pass, all `[batch, channels, frames]`.
pub struct EncoderOutput<T: Float> {
    pub z_s: Tensor<T>,
    pub c_s: Tensor<T>,
    pub z_l: Tensor<T>,
    pub c_l: Tensor<T>,
}

impl<T: Float> Encoder<T> {
    pub fn new(cfg: &CodecConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let relu_init = Init::FanIn(std::f64::consts::SQRT_2);
        let mut c_in = 1;
        let mut lower_convs = Vec::new();
        for (&k, &s) in cfg.lower_filter_sizes.iter().zip(&cfg.lower_strides) {
            lower_convs.push(Conv1d::new(c_in, cfg.conv_hidden, k, ConvSpec::causal(k, s, 1), true, relu_init, rng));
            c_in = cfg.conv_hidden;
        }
        let lower_gru = Gru::new(cfg.conv_hidden, cfg.rep_dim, rng);
        let upper_convs = cfg
            .upper_filter_sizes
            .iter()
            .zip(&cfg.upper_strides)
            .map(|(&k, &s)| Conv1d::new(cfg.conv_hidden, cfg.conv_hidden, k, ConvSpec::causal(k, s, 1), true, relu_init, rng))
            .collect();
        let upper_gru = Gru::new(cfg.conv_hidden, cfg.rep_dim, rng);
        let (d, h) = (cfg.conv_hidden, cfg.rep_dim);
        let head = |rng: &mut _| Tensor::leaf(Init::FanIn(1.0).sample(d * h, h, rng), &[d, h], true);
        let lower_heads = (0..cfg.nce_horizon_lower).map(|_| head(rng)).collect();
        let upper_heads = (0..cfg.nce_horizon_upper).map(|_| head(rng)).collect();
        Ok(Encoder { cfg: cfg.clone(), lower_convs, lower_gru, upper_convs, upper_gru, lower_heads, upper_heads })
    }

    /// `x [B, 1, L]` to both levels. Frame counts are `floor(L / 160)` and
    /// `floor(floor(L / 160) / 8)`.
    pub fn forward(&self, x: &Tensor<T>) -> EncoderOutput<T> {
        let mut h = x.clone();
        for conv in &self.lower_convs {
            h = conv.forward(&h).relu();
        }
        let z_s = h;
        let c_s = self.lower_gru.forward(&z_s);
        let mut u = z_s.clone();
        for conv in &self.upper_convs {
            u = conv.forward(&u).relu();
        }
        let c_l = self.upper_gru.forward(&u);
        EncoderOutput { z_s, c_s, z_l: u, c_l }
    }

    pub fn parameter_count(&self) -> usize {
        nn::parameter_count(self)
    }
}

impl<T: Float> Module<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.lower_convs.visit(&join(prefix, "lower_convs"), f);
        self.lower_gru.visit(&join(prefix, "lower_gru"), f);
        self.upper_convs.visit(&join(prefix, "upper_convs"), f);
        self.upper_gru.visit(&join(prefix, "upper_gru"), f);
        for (i, w) in self.lower_heads.iter().enumerate() {
            f(&join(prefix, &format!("lower_heads.{i}")), w);
        }
        for (i, w) in self.upper_heads.iter().enumerate() {
            f(&join(prefix, &format!("upper_heads.{i}")), w);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.lower_convs.visit_mut(&join(prefix, "lower_convs"), f);
        self.lower_gru.visit_mut(&join(prefix, "lower_gru"), f);
        self.upper_convs.visit_mut(&join(prefix, "upper_convs"), f);
        self.upper_gru.visit_mut(&join(prefix, "upper_gru"), f);
        for (i, w) in self.lower_heads.iter_mut().enumerate() {
            f(&join(prefix, &format!("lower_heads.{i}")), w);
        }
        for (i, w) in self.upper_heads.iter_mut().enumerate() {
            f(&join(prefix, &format!("upper_heads.{i}")), w);
        }
    }
}

/// Per-stream encoder state: convolution context and recurrent states.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    lower: Vec<ConvStream>,
    upper: Vec<ConvStream>,
    h_s: Vec<f32>,
    h_l: Vec<f32>,
    consumed: usize,
    frames_s: usize,
    frames_l: usize,
}

impl EncoderState {
    pub fn consumed_samples(&self) -> usize {
        self.consumed
    }

    pub fn frames_emitted(&self) -> (usize, usize) {
        (self.frames_s, self.frames_l)
    }
}

fn relu_in_place(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn gru_stream(gru: &Gru<f32>, x: &[f32], n: usize, h: &mut Vec<f32>) -> Vec<f32> {
    let hidden = gru.hidden();
    let xp = kernels::gru_project(x, n, gru.input(), gru.w_ih.data(), gru.b_ih.data(), hidden);
    let mut out = vec![0.0; hidden * n];
    *h = kernels::gru_recur(&xp, n, hidden, h, gru.w_hh.data(), gru.b_hh.data(), &mut out, None);
    out
}

fn channel_to_frame_major(x: &[f32], dim: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for d in 0..dim {
        for t in 0..n {
            out[t * dim + d] = x[d * n + t];
        }
    }
    out
}

impl Encoder<f32> {
    pub fn new_state(&self) -> EncoderState {
        EncoderState {
            lower: self.lower_convs.iter().map(ConvStream::new).collect(),
            upper: self.upper_convs.iter().map(ConvStream::new).collect(),
            h_s: vec![0.0; self.cfg.rep_dim],
            h_l: vec![0.0; self.cfg.rep_dim],
            consumed: 0,
            frames_s: 0,
            frames_l: 0,
        }
    }

    /// Streaming encode of the next chunk. Returns the frames completed by
    /// this chunk; any chunking of a signal yields the same frames as a
    /// single call.
    pub fn encode(
        &self,
        x: &[f32],
        sample_rate: u32,
        state: &mut EncoderState,
    ) -> Result<(RepresentationSequence, RepresentationSequence)> {
        if sample_rate != self.cfg.sample_rate {
            return Err(config_err(format!(
                "input sample rate {sample_rate} Hz, encoder expects {} Hz",
                self.cfg.sample_rate
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(input_err(format!("non-finite sample at index {}", state.consumed + i)));
        }
        let (hop_s, hop_l) = (self.cfg.lower_hop(), self.cfg.upper_hop());
        let dim = self.cfg.rep_dim;
        let mut c_s = RepresentationSequence::empty(Level::ShortTerm, dim, hop_s, (state.frames_s + 1) * hop_s - 1);
        let mut c_l = RepresentationSequence::empty(Level::LongTerm, dim, hop_l, (state.frames_l + 1) * hop_l - 1);
        if x.is_empty() {
            return Ok((c_s, c_l));
        }
        let mut h = x.to_vec();
        let mut n = x.len();
        for (conv, st) in self.lower_convs.iter().zip(&mut state.lower) {
            (h, n) = st.push(conv, &h, n);
            relu_in_place(&mut h);
        }
        let z_s = h;
        let n_s = n;
        let out_s = gru_stream(&self.lower_gru, &z_s, n_s, &mut state.h_s);
        c_s.data = channel_to_frame_major(&out_s, dim, n_s);

        let mut u = z_s;
        for (conv, st) in self.upper_convs.iter().zip(&mut state.upper) {
            (u, n) = st.push(conv, &u, n);
            relu_in_place(&mut u);
        }
        let out_l = gru_stream(&self.upper_gru, &u, n, &mut state.h_l);
        c_l.data = channel_to_frame_major(&out_l, dim, n);

        state.consumed += x.len();
        state.frames_s += n_s;
        state.frames_l += n;
        Ok((c_s, c_l))
    }

    /// One-shot encode from a fresh state.
    pub fn encode_all(&self, x: &[f32], sample_rate: u32) -> Result<(RepresentationSequence, RepresentationSequence)> {
        let mut st = self.new_state();
        self.encode(x, sample_rate, &mut st)
    }
}

/// Result of one contrastive loss evaluation.
pub struct NceOutput<T: Float> {
    pub loss: Tensor<T>,
    /// Fraction of anchors whose positive strictly outscores every negative.
    pub accuracy: f64,
    pub anchors: usize,
}

/// `log(sum(exp(s))) - s[0]`: cross-entropy of the first entry.
pub fn info_nce_term(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[0]
}

/// InfoNCE over horizons `1..=heads.len()`.
///
/// `z [B, D, T]` holds the targets (pre-recurrent latents), `c [B, H, T]`
/// the contexts. The anchor at `(b, t)` for horizon `k` scores
/// `z[b, :, t + k] . (W_k c[b, :, t])` against `negatives` latents drawn
/// uniformly from the other batch positions. Returns `None` when the
/// sequence is too short to form any anchor.
pub fn info_nce<T: Float>(
    z: &Tensor<T>,
    c: &Tensor<T>,
    heads: &[Tensor<T>],
    negatives: usize,
    rng: &mut impl Rng,
) -> Option<NceOutput<T>> {
    let (b, d, t_len) = (z.dim(0), z.dim(1), z.dim(2));
    let h = c.dim(1);
    assert_eq!((c.dim(0), c.dim(2)), (b, t_len), "info_nce: context/target mismatch");
    let horizons = heads.len();
    let anchors: usize = (1..=horizons).map(|k| b * t_len.saturating_sub(k)).sum();
    if anchors == 0 || b * t_len < 2 {
        return None;
    }
    // zt[b * T + t] = z[b, :, t]
    let mut zt = vec![T::zero(); b * t_len * d];
    for bi in 0..b {
        for di in 0..d {
            for ti in 0..t_len {
                zt[(bi * t_len + ti) * d + di] = z.data()[(bi * d + di) * t_len + ti];
            }
        }
    }
    // pt[(k, b)] = (W_k c_b)^T, shape [T, D]
    let mut pt = vec![T::zero(); horizons * b * t_len * d];
    for (k, w) in heads.iter().enumerate() {
        for bi in 0..b {
            let cb = &c.data()[bi * h * t_len..(bi + 1) * h * t_len];
            let dst = &mut pt[(k * b + bi) * t_len * d..(k * b + bi + 1) * t_len * d];
            kernels::gemm(t_len, d, h, cb, true, w.data(), true, T::zero(), dst);
        }
    }
    let n_pos = b * t_len;
    let per = negatives + 1;
    // (k, b, t, candidate indices with the positive first)
    let mut plan: Vec<(usize, usize, usize, Vec<usize>)> = Vec::with_capacity(anchors);
    for k in 1..=horizons {
        for bi in 0..b {
            for ti in 0..t_len.saturating_sub(k) {
                let pos = bi * t_len + ti + k;
                let mut idx = Vec::with_capacity(per);
                idx.push(pos);
                while idx.len() < per {
                    let cand = rng.gen_range(0..n_pos);
                    if cand != pos {
                        idx.push(cand);
                    }
                }
                plan.push((k - 1, bi, ti, idx));
            }
        }
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut probs: Vec<Vec<T>> = Vec::with_capacity(anchors);
    let mut scores = vec![0.0f64; per];
    for (k, bi, ti, idx) in &plan {
        let p = &pt[((k * b + bi) * t_len + ti) * d..((k * b + bi) * t_len + ti + 1) * d];
        for (s, &j) in scores.iter_mut().zip(idx) {
            let zj = &zt[j * d..(j + 1) * d];
            *s = zj.iter().zip(p).map(|(a, b)| *a * *b).sum::<T>().as_f64();
        }
        loss_sum += info_nce_term(&scores);
        if scores[1..].iter().all(|&s| scores[0] > s) {
            correct += 1;
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        probs.push(e.iter().map(|v| T::of_f64(v / tot)).collect());
    }
    let inv = T::one() / T::of_usize(anchors);
    let loss_val = T::of_f64(loss_sum) * inv;
    let mut parents = vec![z.clone(), c.clone()];
    parents.extend(heads.iter().cloned());
    let c_saved = c.clone();
    let loss = Tensor::from_op(vec![loss_val], &[1], parents, move |ps, g, needs| {
        let scale = g[0] * inv;
        let mut dzt = vec![T::zero(); b * t_len * d];
        let mut dpt = vec![T::zero(); horizons * b * t_len * d];
        for ((k, bi, ti, idx), pr) in plan.iter().zip(&probs) {
            let off = ((k * b + bi) * t_len + ti) * d;
            for (jj, &j) in idx.iter().enumerate() {
                let ds = scale * (pr[jj] - if jj == 0 { T::one() } else { T::zero() });
                for di in 0..d {
                    dpt[off + di] += ds * zt[j * d + di];
                    dzt[j * d + di] += ds * pt[off + di];
                }
            }
        }
        let gz = needs[0].then(|| {
            let mut gz = vec![T::zero(); b * d * t_len];
            for bi in 0..b {
                for di in 0..d {
                    for ti in 0..t_len {
                        gz[(bi * d + di) * t_len + ti] = dzt[(bi * t_len + ti) * d + di];
                    }
                }
            }
            gz
        });
        let mut gc = needs[1].then(|| vec![T::zero(); b * h * t_len]);
        let mut out = Vec::with_capacity(2 + horizons);
        let mut gws: Vec<Option<Vec<T>>> = (0..horizons).map(|k| needs[2 + k].then(|| vec![T::zero(); d * h])).collect();
        for k in 0..horizons {
            let w = ps[2 + k].data();
            for bi in 0..b {
                let dp = &dpt[(k * b + bi) * t_len * d..(k * b + bi + 1) * t_len * d];
                let cb = &c_saved.data()[bi * h * t_len..(bi + 1) * h * t_len];
                if let Some(gw) = gws[k].as_mut() {
                    kernels::gemm(d, h, t_len, dp, true, cb, true, T::one(), gw);
                }
                if let Some(gcv) = gc.as_mut() {
                    let dst = &mut gcv[bi * h * t_len..(bi + 1) * h * t_len];
                    kernels::gemm(h, t_len, d, w, true, dp, true, T::one(), dst);
                }
            }
        }
        out.push(gz);
        out.push(gc);
        out.extend(gws);
        out
    });
    Some(NceOutput { loss, accuracy: correct as f64 / anchors as f64, anchors })
}

/// Contrastive losses of both levels for one forward pass. Levels too short
/// to form anchors are skipped.
pub struct PretrainLoss<T: Float> {
    pub loss: Tensor<T>,
    pub accuracy_short: Option<f64>,
    pub accuracy_long: Option<f64>,
}

impl<T: Float> Encoder<T> {
    pub fn pretrain_loss(&self, x: &Tensor<T>, rng: &mut impl Rng) -> Option<PretrainLoss<T>> {
        let out = self.forward(x);
        let neg = self.cfg.negatives_per_positive;
        let lower = info_nce(&out.z_s, &out.c_s, &self.lower_heads, neg, rng);
        let upper = info_nce(&out.z_l, &out.c_l, &self.upper_heads, neg, rng);
        let accuracy_short = lower.as_ref().map(|o| o.accuracy);
        let accuracy_long = upper.as_ref().map(|o| o.accuracy);
        let loss = match (lower, upper) {
            (Some(a), Some(b)) => a.loss.add(&b.loss),
            (Some(a), None) => a.loss,
            (None, Some(b)) => b.loss,
            (None, None) => return None,
        };
        Some(PretrainLoss { loss, accuracy_short, accuracy_long })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> CodecConfig {
        CodecConfig { conv_hidden: 8, rep_dim: 8, nce_horizon_lower: 3, nce_horizon_upper: 2, ..Default::default() }
    }

    #[test]
    fn shape_law_one_second() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        let x: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.01).sin() * 0.3).collect();
        let (cs, cl) = enc.encode_all(&x, 16000).unwrap();
        assert_eq!((cs.len(), cl.len()), (100, 12));
        assert_eq!(cs.start_sample, 159);
        let empty = enc.encode_all(&[], 16000).unwrap();
        assert_eq!((empty.0.len(), empty.1.len()), (0, 0));
    }

    #[test]
    fn empty_chunk_leaves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        let mut st = enc.new_state();
        enc.encode(&[0.1; 777], 16000, &mut st).unwrap();
        let before = st.clone();
        enc.encode(&[], 16000, &mut st).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        assert!(matches!(enc.encode_all(&[0.0; 10], 8000), Err(crate::CodecError::Config(_))));
        assert!(matches!(enc.encode_all(&[0.0, f32::NAN], 16000), Err(crate::CodecError::Input(_))));
    }

    #[test]
    fn streaming_matches_batch_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        let x: Vec<f32> = (0..5000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let out = enc.forward(&Tensor::new(x.clone(), &[1, 1, x.len()]));
        let (cs, cl) = enc.encode_all(&x, 16000).unwrap();
        assert_eq!(cs.to_tensor().data(), out.c_s.data());
        assert_eq!(cl.to_tensor().data(), out.c_l.data());
    }

    #[test]
    fn two_equal_scores_give_log2() {
        assert!((info_nce_term(&[0.7, 0.7]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, d, h, t) = (2, 3, 2, 5);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let z0 = r(b * d * t);
        let c0 = r(b * h * t);
        let w0 = [r(d * h), r(d * h)];
        let eval = |z: &[f64], c: &[f64], w: &[Vec<f64>], grad: bool| {
            let zt = Tensor::leaf(z.to_vec(), &[b, d, t], grad);
            let ct = Tensor::leaf(c.to_vec(), &[b, h, t], grad);
            let ws: Vec<Tensor<f64>> = w.iter().map(|v| Tensor::leaf(v.clone(), &[d, h], grad)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let o = info_nce(&zt, &ct, &ws, 3, &mut rng).unwrap();
            (o.loss, zt, ct, ws)
        };
        let (loss, zt, ct, ws) = eval(&z0, &c0, &w0, true);
        let grads = loss.backward();
        let eps = 1e-6;
        let check = |analytic: &[f64], base: &[f64], f: &dyn Fn(&[f64]) -> f64| {
            for i in 0..base.len() {
                let mut p = base.to_vec();
                p[i] += eps;
                let mut m = base.to_vec();
                m[i] -= eps;
                let num = (f(&p) - f(&m)) / (2.0 * eps);
                let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-4);
                assert!(err < 1e-5, "num {num} vs {}", analytic[i]);
            }
        };
        check(grads.get(&zt).unwrap(), &z0, &|z| eval(z, &c0, &w0, false).0.item());
        check(grads.get(&ct).unwrap(), &c0, &|c| eval(&z0, c, &w0, false).0.item());
        check(grads.get(&ws[1]).unwrap(), &w0[1], &|w| {
            eval(&z0, &c0, &[w0[0].clone(), w.to_vec()], false).0.item()
        });
    }

    #[test]
    fn untrained_accuracy_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        let x: Vec<f32> = (0..4 * 20480).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let pl = enc.pretrain_loss(&Tensor::new(x, &[4, 1, 20480]), &mut rng).unwrap();
        let acc = pl.accuracy_short.unwrap();
        assert!((0.05..0.25).contains(&acc), "accuracy {acc}");
        assert!(pl.loss.item().is_finite() && pl.loss.item() >= 0.0);
    }

    #[test]
    fn too_short_levels_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc: Encoder = Encoder::new(&small_cfg(), &mut rng).unwrap();
        let x = Tensor::new(vec![0.1; 320], &[1, 1, 320]);
        let pl = enc.pretrain_loss(&x, &mut rng).unwrap();
        assert!(pl.accuracy_long.is_none());
        assert!(pl.accuracy_short.is_some());
        assert!(enc.pretrain_loss(&Tensor::new(vec![0.1; 100], &[1, 1, 100]), &mut rng).is_none());
    }
}
