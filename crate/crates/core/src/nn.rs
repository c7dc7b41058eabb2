//! Parameterized layers and parameter bookkeeping.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{CodecError, Result};
use crate::tensor::{ConvSpec, Float, Tensor};

/// Anything that owns named trainable tensors.
pub trait Module<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn parameter_count<T: Float>(m: &dyn Module<T>) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, t| n += t.numel());
    n
}

pub fn named_params<T: Float>(m: &dyn Module<T>) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

/// Replace every parameter by a copy with the given gradient flag.
pub fn set_requires_grad<T: Float>(m: &mut dyn Module<T>, flag: bool) {
    m.visit_mut("", &mut |_, t| {
        if t.requires_grad() != flag {
            *t = t.with_requires_grad(flag);
        }
    });
}

/// Flat copy of all parameter values, in visiting order.
pub fn snapshot<T: Float>(m: &dyn Module<T>) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    m.visit("", &mut |_, t| out.push(t.to_vec()));
    out
}

/// Overwrite parameters from a name-indexed map; shapes must match and every
/// parameter must be present.
pub fn load_params(m: &mut dyn Module<f32>, prefix: &str, arrays: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, t| {
        if err.is_some() {
            return;
        }
        match arrays.get(name) {
            None => err = Some(CodecError::Checkpoint(format!("missing parameter {name}"))),
            Some((shape, data)) if shape.as_slice() != t.shape() => {
                err = Some(CodecError::Checkpoint(format!(
                    "parameter {name}: shape {shape:?} in file, {:?} expected",
                    t.shape()
                )))
            }
            Some((_, data)) => {
                let flag = t.requires_grad();
                *t = Tensor::leaf(data.clone(), t.shape(), flag);
            }
        }
    });
    err.map_or(Ok(()), Err)
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    FanIn(f64),
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    UniformFanIn,
    Zeros,
}

impl Init {
    pub fn sample<T: Float>(&self, n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<T> {
        let fan = fan_in.max(1) as f64;
        match *self {
            Init::FanIn(gain) => {
                let d = Normal::new(0.0, gain / fan.sqrt()).expect("valid std");
                (0..n).map(|_| T::of_f64(d.sample(rng))).collect()
            }
            Init::UniformFanIn => {
                let b = 1.0 / fan.sqrt();
                let d = Uniform::new_inclusive(-b, b);
                (0..n).map(|_| T::of_f64(d.sample(rng))).collect()
            }
            Init::Zeros => vec![T::zero(); n],
        }
    }
}

pub struct Conv1d<T: Float = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub spec: ConvSpec,
}

impl<T: Float> Conv1d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, spec: ConvSpec, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        let cin_g = c_in / spec.groups;
        let fan_in = cin_g * kernel;
        let weight = Tensor::leaf(init.sample(c_out * cin_g * kernel, fan_in, rng), &[c_out, cin_g, kernel], true);
        let bias = bias.then(|| Tensor::leaf(vec![T::zero(); c_out], &[c_out], true));
        Conv1d { weight, bias, spec }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv1d(&self.weight, self.bias.as_ref(), self.spec)
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(1) * self.spec.groups
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }
}

impl<T: Float> Module<T> for Conv1d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution with the overlapping tail trimmed (see
/// [`Tensor::conv_transpose1d_causal`]). Weight layout `[c_in, c_out, k]`.
pub struct ConvTranspose1d<T: Float = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Float> ConvTranspose1d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, init: Init, rng: &mut impl Rng) -> Self {
        // each output sample sees about c_in * kernel / stride inputs
        let fan_in = (c_in * kernel / stride).max(1);
        let weight = Tensor::leaf(init.sample(c_in * c_out * kernel, fan_in, rng), &[c_in, c_out, kernel], true);
        let bias = Tensor::leaf(vec![T::zero(); c_out], &[c_out], true);
        ConvTranspose1d { weight, bias, stride }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv_transpose1d_causal(&self.weight, Some(&self.bias), self.stride)
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }
}

impl<T: Float> Module<T> for ConvTranspose1d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// GRU with sigmoid gates and an identity candidate activation.
pub struct Gru<T: Float = f32> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

impl<T: Float> Gru<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let init = Init::UniformFanIn;
        let h3 = 3 * hidden;
        Gru {
            w_ih: Tensor::leaf(init.sample(h3 * input, hidden, rng), &[h3, input], true),
            w_hh: Tensor::leaf(init.sample(h3 * hidden, hidden, rng), &[h3, hidden], true),
            b_ih: Tensor::leaf(init.sample(h3, hidden, rng), &[h3], true),
            b_hh: Tensor::leaf(init.sample(h3, hidden, rng), &[h3], true),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn input(&self) -> usize {
        self.w_ih.dim(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.gru(&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh)
    }
}

impl<T: Float> Module<T> for Gru<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "b_ih"), &self.b_ih);
        f(&join(prefix, "b_hh"), &self.b_hh);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "b_ih"), &mut self.b_ih);
        f(&join(prefix, "b_hh"), &mut self.b_hh);
    }
}

impl<T: Float, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_conv_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let c: Conv1d<f32> = Conv1d::new(1, 1, 10, ConvSpec::causal(10, 5, 1), true, Init::FanIn(1.0), &mut rng);
        assert_eq!(parameter_count(&c), 11);
        let t: ConvTranspose1d<f32> = ConvTranspose1d::new(64, 32, 4, 2, Init::FanIn(1.0), &mut rng);
        assert_eq!(parameter_count(&t), 8224);
    }

    #[test]
    fn names_and_reload() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut layers: Vec<Gru<f32>> = vec![Gru::new(3, 2, &mut rng), Gru::new(2, 2, &mut rng)];
        let names: Vec<String> = named_params(&layers).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "0.w_ih");
        assert_eq!(names.len(), 8);
        let arrays: BTreeMap<_, _> = named_params(&layers)
            .into_iter()
            .map(|(n, t)| (n, (t.shape().to_vec(), t.data().iter().map(|v| v + 1.0).collect::<Vec<_>>())))
            .collect();
        let before = snapshot(&layers);
        load_params(&mut layers, "", &arrays).unwrap();
        let after = snapshot(&layers);
        for (a, b) in before.iter().flatten().zip(after.iter().flatten()) {
            assert_eq!(*a + 1.0, *b);
        }
        let mut missing = arrays.clone();
        missing.remove("1.b_hh");
        assert!(load_params(&mut layers, "", &missing).is_err());
    }
}
