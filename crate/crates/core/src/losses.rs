//! Adversarial, feature-matching, latent and spectral objectives.
//!
//! Score maps and feature maps are reduced by their element means, then
//! averaged over discriminator blocks.

use crate::config::LossWeights;
use crate::discriminators::DiscriminatorOutput;
use crate::encoder::{Encoder, Level};
use crate::error::{input_err, Result};
use crate::tensor::{Float, Tensor};

fn block_mean<T: Float>(terms: Vec<Tensor<T>>) -> Tensor<T> {
    if terms.is_empty() {
        return Tensor::scalar(T::zero());
    }
    let w = T::one() / T::of_usize(terms.len());
    let pairs: Vec<(Tensor<T>, T)> = terms.into_iter().map(|t| (t, w)).collect();
    Tensor::weighted_sum(&pairs)
}

/// Discriminator objective: `(s_real - 1)^2 + s_fake^2`.
pub fn lsgan_d_loss<T: Float>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    if real.len() != fake.len() {
        return Err(input_err(format!("{} real and {} fake score maps", real.len(), fake.len())));
    }
    let terms = real.iter().zip(fake).map(|(r, f)| r.sq_dev_mean(T::one()).add(&f.sq_dev_mean(T::zero()))).collect();
    Ok(block_mean(terms))
}

/// Generator objective: `(s_fake - 1)^2`.
pub fn lsgan_g_loss<T: Float>(fake: &[Tensor<T>]) -> Tensor<T> {
    block_mean(fake.iter().map(|f| f.sq_dev_mean(T::one())).collect())
}

/// Per block, the sum over layers of the mean absolute feature difference;
/// averaged over blocks.
pub fn feature_matching<T: Float>(real: &[Vec<Tensor<T>>], fake: &[Vec<Tensor<T>>]) -> Result<Tensor<T>> {
    if real.len() != fake.len() {
        return Err(input_err(format!("{} real and {} fake feature lists", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (bi, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.len() != f.len() {
            return Err(input_err(format!("block {bi}: {} real and {} fake layers", r.len(), f.len())));
        }
        let mut layers = Vec::with_capacity(r.len());
        for (li, (a, b)) in r.iter().zip(f).enumerate() {
            if a.shape() != b.shape() {
                return Err(input_err(format!("block {bi} layer {li}: shapes {:?} and {:?}", a.shape(), b.shape())));
            }
            layers.push((a.l1_mean(b), T::one()));
        }
        terms.push(Tensor::weighted_sum(&layers));
    }
    Ok(block_mean(terms))
}

pub fn scores<T: Float>(outs: &[DiscriminatorOutput<T>]) -> Vec<Tensor<T>> {
    outs.iter().map(|o| o.score.clone()).collect()
}

pub fn features<T: Float>(outs: &[DiscriminatorOutput<T>]) -> Vec<Vec<Tensor<T>>> {
    outs.iter().map(|o| o.features.clone()).collect()
}

/// Mean absolute difference between unquantized representations of `x` and
/// `x_hat` at both levels, `(short, long)`. The reference side is detached;
/// gradients reach `x_hat` only. Freeze the encoder parameters first to keep
/// them out of the graph.
pub fn cc_distances<T: Float>(enc: &Encoder<T>, x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.shape() != x_hat.shape() {
        return Err(input_err(format!("cc distance: shapes {:?} and {:?} differ", x.shape(), x_hat.shape())));
    }
    let a = enc.forward(&x.detach());
    let b = enc.forward(x_hat);
    Ok((b.c_s.l1_mean(&a.c_s.detach()), b.c_l.l1_mean(&a.c_l.detach())))
}

pub fn cc_distance<T: Float>(enc: &Encoder<T>, level: Level, x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
    let (s, l) = cc_distances(enc, x, x_hat)?;
    Ok(match level {
        Level::ShortTerm => s,
        Level::LongTerm => l,
    })
}

/// Weighted generator objective over scalar components, in the same order
/// and precision as [`LossWeights::total`].
pub fn total_generator_loss(
    adv: &Tensor<f32>,
    cc_s: &Tensor<f32>,
    cc_l: &Tensor<f32>,
    mel: &Tensor<f32>,
    fm: &Tensor<f32>,
    w: &LossWeights,
) -> Tensor<f32> {
    Tensor::weighted_sum(&[
        (adv.clone(), w.adv),
        (cc_s.clone(), w.cc_short),
        (cc_l.clone(), w.cc_long),
        (mel.clone(), w.mel),
        (fm.clone(), w.fm),
    ])
}
