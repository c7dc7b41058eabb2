//! Incremental counterparts of the convolution layers. Each one reproduces
//! the one-shot layer output bit for bit, whatever the chunk sizes.

use crate::nn::{Conv1d, ConvTranspose1d};
use crate::tensor::kernels::{self, ConvGeom};

/// Left-context buffer of a causal (or unpadded) convolution.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvStream {
    channels: usize,
    /// `[channels, len]`, starting as `pad_left` zero columns.
    buf: Vec<f32>,
    len: usize,
}

impl ConvStream {
    pub fn new(conv: &Conv1d<f32>) -> Self {
        assert_eq!(conv.spec.pad_right, 0, "streaming needs a causal convolution");
        let pad = conv.spec.pad_left;
        ConvStream { channels: conv.c_in(), buf: vec![0.0; conv.c_in() * pad], len: pad }
    }

    /// Feed `x [channels, n]`; returns the `[c_out, m]` outputs completed.
    pub fn push(&mut self, conv: &Conv1d<f32>, x: &[f32], n: usize) -> (Vec<f32>, usize) {
        let c = self.channels;
        debug_assert_eq!(x.len(), c * n);
        let total = self.len + n;
        let mut joined = Vec::with_capacity(c * total);
        for ch in 0..c {
            joined.extend_from_slice(&self.buf[ch * self.len..(ch + 1) * self.len]);
            joined.extend_from_slice(&x[ch * n..(ch + 1) * n]);
        }
        let geom = ConvGeom {
            c_in: c,
            c_out: conv.c_out(),
            kernel: conv.kernel(),
            stride: conv.spec.stride,
            dilation: conv.spec.dilation,
            groups: conv.spec.groups,
            pad_left: 0,
            pad_right: 0,
        };
        let m = geom.out_len(total);
        let mut out = vec![0.0; conv.c_out() * m];
        kernels::conv1d_forward(&joined, total, conv.weight.data(), conv.bias.as_ref().map(|b| b.data()), &geom, &mut out);
        let drop = (m * geom.stride).min(total);
        let keep = total - drop;
        let mut buf = Vec::with_capacity(c * keep);
        for ch in 0..c {
            buf.extend_from_slice(&joined[ch * total + drop..(ch + 1) * total]);
        }
        self.buf = buf;
        self.len = keep;
        (out, m)
    }
}

/// Pending overlap-add region of a tail-trimmed transposed convolution.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvTStream {
    c_out: usize,
    /// `[c_out, len]` partial sums for positions from `next_input * stride`.
    acc: Vec<f32>,
    len: usize,
}

impl ConvTStream {
    pub fn new(layer: &ConvTranspose1d<f32>) -> Self {
        ConvTStream { c_out: layer.c_out(), acc: Vec::new(), len: 0 }
    }

    /// Feed `x [c_in, n]`; returns `[c_out, n * stride]` finished outputs.
    pub fn push(&mut self, layer: &ConvTranspose1d<f32>, x: &[f32], n: usize) -> Vec<f32> {
        let (c_in, c_out, k, s) = (layer.c_in(), self.c_out, layer.kernel(), layer.stride);
        if n == 0 {
            return Vec::new();
        }
        let cols = kernels::convt_columns(x, n, layer.weight.data(), c_in, c_out, k);
        let need = (n - 1) * s + k;
        let new_len = need.max(self.len);
        let mut acc = vec![0.0f32; c_out * new_len];
        for co in 0..c_out {
            acc[co * new_len..co * new_len + self.len].copy_from_slice(&self.acc[co * self.len..(co + 1) * self.len]);
        }
        for co in 0..c_out {
            let row = &mut acc[co * new_len..(co + 1) * new_len];
            for i in 0..n {
                for kk in 0..k {
                    row[i * s + kk] += cols[(co * k + kk) * n + i];
                }
            }
        }
        let done = n * s;
        let bias = layer.bias.data();
        let mut out = Vec::with_capacity(c_out * done);
        for co in 0..c_out {
            out.extend(acc[co * new_len..co * new_len + done].iter().map(|v| *v + bias[co]));
        }
        let rest = new_len - done;
        let mut tail = Vec::with_capacity(c_out * rest);
        for co in 0..c_out {
            tail.extend_from_slice(&acc[co * new_len + done..(co + 1) * new_len]);
        }
        self.acc = tail;
        self.len = rest;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use crate::tensor::{ConvSpec, Tensor};
    use rand::{Rng, SeedableRng};

    #[test]
    fn chunked_layers_match_one_shot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let conv: Conv1d<f32> = Conv1d::new(3, 4, 5, ConvSpec::causal(5, 1, 3), true, Init::FanIn(1.0), &mut rng);
        let mut convt: ConvTranspose1d<f32> = ConvTranspose1d::new(3, 2, 10, 5, Init::FanIn(1.0), &mut rng);
        convt.bias = Tensor::leaf(vec![0.3, -0.2], &[2], true);
        let l = 37;
        let x: Vec<f32> = (0..3 * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt = Tensor::new(x.clone(), &[1, 3, l]);
        let want_c = conv.forward(&xt).to_vec();
        let want_t = convt.forward(&xt).to_vec();
        for trial in 0..5 {
            let mut cs = ConvStream::new(&conv);
            let mut ts = ConvTStream::new(&convt);
            let (mut got_c, mut got_t) = (vec![Vec::new(); 4], vec![Vec::new(); 2]);
            let mut pos = 0;
            while pos < l {
                let n = if trial == 0 { 1 } else { rng.gen_range(0..9).min(l - pos) };
                let chunk: Vec<f32> = (0..3).flat_map(|c| x[c * l + pos..c * l + pos + n].to_vec()).collect();
                let (o, m) = cs.push(&conv, &chunk, n);
                for (c, row) in got_c.iter_mut().enumerate() {
                    row.extend_from_slice(&o[c * m..(c + 1) * m]);
                }
                let o = ts.push(&convt, &chunk, n);
                for (c, row) in got_t.iter_mut().enumerate() {
                    row.extend_from_slice(&o[c * n * 5..(c + 1) * n * 5]);
                }
                pos += n;
            }
            assert_eq!(got_c.concat(), want_c);
            assert_eq!(got_t.concat(), want_t);
        }
    }
}
