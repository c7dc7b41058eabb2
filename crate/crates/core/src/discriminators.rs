//! Multi-scale and multi-period waveform discriminators.

use std::rc::Rc;

use rand::Rng;

use crate::config::DiscriminatorConfig;
use crate::error::{input_err, Result};
use crate::nn::{join, Conv1d, Init, Module};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Shortest segment the ensembles accept.
pub const MIN_INPUT_LEN: usize = 256;

/// Score map and post-activation feature maps of one block.
pub struct DiscriminatorOutput<T: Float = f32> {
    pub score: Tensor<T>,
    pub features: Vec<Tensor<T>>,
}

/// A stack of strided convolutions plus a score convolution.
pub struct ConvStack<T: Float = f32> {
    pub convs: Vec<Conv1d<T>>,
    pub post: Conv1d<T>,
    pub slope: f32,
}

impl<T: Float> ConvStack<T> {
    fn forward(&self, x: &Tensor<T>) -> DiscriminatorOutput<T> {
        let mut h = x.clone();
        let mut features = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(&h).leaky_relu(self.slope as f64);
            features.push(h.clone());
        }
        DiscriminatorOutput { score: self.post.forward(&h), features }
    }
}

impl<T: Float> Module<T> for ConvStack<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.convs.visit(&join(prefix, "convs"), f);
        self.post.visit(&join(prefix, "post"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.convs.visit_mut(&join(prefix, "convs"), f);
        self.post.visit_mut(&join(prefix, "post"), f);
    }
}

/// Blocks on the raw signal and on copies average-pooled by 2, 4, ...
pub struct Msd<T: Float = f32> {
    pub blocks: Vec<ConvStack<T>>,
}

impl<T: Float> Msd<T> {
    pub fn new(cfg: &DiscriminatorConfig, init: Init, rng: &mut impl Rng) -> Self {
        let blocks = (0..cfg.msd_scales)
            .map(|_| {
                let mut c_in = 1;
                let mut convs = Vec::new();
                for i in 0..cfg.msd_channels.len() {
                    let (c, k, s, g) = (cfg.msd_channels[i], cfg.msd_kernels[i], cfg.msd_strides[i], cfg.msd_groups[i]);
                    convs.push(Conv1d::new(c_in, c, k, ConvSpec::symmetric(k, s, g), true, init, rng));
                    c_in = c;
                }
                let pk = cfg.post_kernel;
                let post = Conv1d::new(c_in, 1, pk, ConvSpec::symmetric(pk, 1, 1), true, init, rng);
                ConvStack { convs, post, slope: cfg.lrelu_slope }
            })
            .collect();
        Msd { blocks }
    }

    /// Inputs seen by each block: `x`, then repeated two-sample means.
    pub fn block_inputs(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut out = vec![x.clone()];
        for _ in 1..self.blocks.len() {
            let next = out[out.len() - 1].avg_pool2();
            out.push(next);
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        check_input(x)?;
        Ok(self.blocks.iter().zip(self.block_inputs(x)).map(|(b, xi)| b.forward(&xi)).collect())
    }
}

impl<T: Float> Module<T> for Msd<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.blocks.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.blocks.visit_mut(prefix, f);
    }
}

/// Source index, in the unpadded signal of length `len`, of every cell of
/// the `[p, ceil(len / p)]` period array (row-major). Cells past the end
/// reflect about the last sample.
pub fn mpd_index(len: usize, p: usize) -> (Vec<usize>, usize) {
    assert!(p > 0 && len > 0);
    let cols = len.div_ceil(p);
    let padded = cols * p;
    assert!(padded - len < len, "reflection needs more samples than padding");
    let src = |j: usize| if j < len { j } else { 2 * (len - 1) - j };
    let mut idx = Vec::with_capacity(padded);
    for row in 0..p {
        idx.extend((0..cols).map(|c| src(c * p + row)));
    }
    debug_assert!(padded == len || padded - len < p);
    (idx, cols)
}

/// Row `i` holds samples `i, i + p, i + 2p, ...` of the reflection-padded signal.
pub fn mpd_reshape(x: &[f32], p: usize) -> Vec<Vec<f32>> {
    let (idx, cols) = mpd_index(x.len(), p);
    idx.chunks(cols).map(|row| row.iter().map(|&j| x[j]).collect()).collect()
}

/// One block per period. The period array is folded into the batch so each
/// row is convolved independently along time, matching a 2-D convolution
/// with `(k, 1)` kernels.
pub struct Mpd<T: Float = f32> {
    pub periods: Vec<usize>,
    pub blocks: Vec<ConvStack<T>>,
}

impl<T: Float> Mpd<T> {
    pub fn new(cfg: &DiscriminatorConfig, init: Init, rng: &mut impl Rng) -> Self {
        let blocks = cfg
            .mpd_periods
            .iter()
            .map(|_| {
                let mut c_in = 1;
                let mut convs = Vec::new();
                for (&c, &s) in cfg.mpd_channels.iter().zip(&cfg.mpd_strides) {
                    let k = cfg.mpd_kernel;
                    convs.push(Conv1d::new(c_in, c, k, ConvSpec::symmetric(k, s, 1), true, init, rng));
                    c_in = c;
                }
                let pk = cfg.post_kernel;
                let post = Conv1d::new(c_in, 1, pk, ConvSpec::symmetric(pk, 1, 1), true, init, rng);
                ConvStack { convs, post, slope: cfg.lrelu_slope }
            })
            .collect();
        Mpd { periods: cfg.mpd_periods.clone(), blocks }
    }

    /// `[B, 1, T] -> [B * p, 1, ceil(T / p)]`, batch-major then row.
    pub fn fold(x: &Tensor<T>, p: usize) -> Tensor<T> {
        let (b, t) = (x.dim(0), x.dim(2));
        let (idx, cols) = mpd_index(t, p);
        let mut full = Vec::with_capacity(b * idx.len());
        for bi in 0..b {
            full.extend(idx.iter().map(|&j| bi * t + j));
        }
        x.gather(Rc::new(full), &[b * p, 1, cols])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        check_input(x)?;
        Ok(self.periods.iter().zip(&self.blocks).map(|(&p, b)| b.forward(&Self::fold(x, p))).collect())
    }
}

impl<T: Float> Module<T> for Mpd<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.blocks.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.blocks.visit_mut(prefix, f);
    }
}

fn check_input<T: Float>(x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[1] != 1 {
        return Err(input_err(format!("discriminator input must be [batch, 1, samples], got {s:?}")));
    }
    if s[2] < MIN_INPUT_LEN {
        return Err(input_err(format!("discriminator input of {} samples is shorter than {MIN_INPUT_LEN}", s[2])));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(input_err("non-finite discriminator input"));
    }
    Ok(())
}

/// Both ensembles.
pub struct Discriminators<T: Float = f32> {
    pub msd: Msd<T>,
    pub mpd: Mpd<T>,
}

impl<T: Float> Discriminators<T> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::with_init(cfg, Init::FanIn(1.0), rng)
    }

    pub fn with_init(cfg: &DiscriminatorConfig, init: Init, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Discriminators { msd: Msd::new(cfg, init, rng), mpd: Mpd::new(cfg, init, rng) })
    }

    /// MSD blocks followed by MPD blocks in period order.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        let mut out = self.msd.forward(x)?;
        out.extend(self.mpd.forward(x)?);
        Ok(out)
    }
}

impl<T: Float> Module<T> for Discriminators<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.msd.visit(&join(prefix, "msd"), f);
        self.mpd.visit(&join(prefix, "mpd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.msd.visit_mut(&join(prefix, "msd"), f);
        self.mpd.visit_mut(&join(prefix, "mpd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            msd_channels: vec![4, 8, 8, 16],
            msd_groups: vec![1, 2, 4, 4],
            mpd_channels: vec![4, 8, 8, 8, 8],
            ..Default::default()
        }
    }

    #[test]
    fn period_layout_example() {
        let x: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let rows = mpd_reshape(&x, 3);
        assert_eq!(rows, vec![vec![0., 3., 6., 9.], vec![1., 4., 7., 10.], vec![2., 5., 8., 11.]]);
        assert_eq!(mpd_reshape(&x, 1), vec![x.clone()]);
        // 10 samples, period 4: pad with x[8], x[7]
        let rows = mpd_reshape(&x[..10], 4);
        assert_eq!(rows[2], vec![2., 6., 8.]);
        assert_eq!(rows[3], vec![3., 7., 7.]);
    }

    #[test]
    fn block_shapes_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d: Discriminators = Discriminators::new(&small(), &mut rng).unwrap();
        let x = Tensor::new((0..2 * 1024).map(|i| ((i as f32) * 0.05).sin()).collect(), &[2, 1, 1024]);
        let inputs = d.msd.block_inputs(&x);
        assert_eq!(inputs.iter().map(|t| t.dim(2)).collect::<Vec<_>>(), vec![1024, 512, 256]);
        let out = d.forward(&x).unwrap();
        assert_eq!(out.len(), 8);
        for (i, o) in out.iter().enumerate() {
            assert_eq!(o.features.len(), if i < 3 { 4 } else { 5 });
            assert!(o.score.data().iter().all(|v| v.is_finite()));
        }
        for (o, p) in out[3..].iter().zip([2, 3, 5, 7, 11]) {
            assert_eq!(o.features[0].dim(0), 2 * p);
        }
        assert!(d.forward(&Tensor::zeros(&[1, 1, 100])).is_err());
        assert!(d.forward(&Tensor::zeros(&[1, 2, 400])).is_err());
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d: Discriminators = Discriminators::with_init(&small(), Init::Zeros, &mut rng).unwrap();
        let x = Tensor::new((0..777).map(|i| (i as f32 * 0.3).cos()).collect(), &[1, 1, 777]);
        for o in d.forward(&x).unwrap() {
            assert!(o.score.data().iter().all(|&v| v == 0.0));
        }
    }

    proptest! {
        #[test]
        fn period_array_is_a_permutation(len in 12usize..400, pi in 0usize..5) {
            let p = [2, 3, 5, 7, 11][pi];
            let (idx, cols) = mpd_index(len, p);
            prop_assert_eq!(idx.len(), cols * p);
            let mut seen = vec![0usize; len];
            for &j in &idx {
                seen[j] += 1;
            }
            let pad = cols * p - len;
            prop_assert!(seen.iter().all(|&c| c >= 1));
            prop_assert_eq!(seen.iter().sum::<usize>(), len + pad);
            if pad == 0 {
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }
    }
}
