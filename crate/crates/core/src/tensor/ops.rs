use std::rc::Rc;

use super::kernels::{self, ConvGeom, GruCache};
use super::{Float, Tensor};

/// Stride/dilation/padding/grouping of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Left padding only: output `t` sees inputs up to `(t + 1) * stride - 1`.
    pub fn causal(kernel: usize, stride: usize, dilation: usize) -> Self {
        let span = (kernel - 1) * dilation + 1;
        assert!(span >= stride, "kernel span must cover the stride");
        ConvSpec { stride, dilation, pad_left: span - stride, pad_right: 0, groups: 1 }
    }

    /// Symmetric `(kernel - 1) / 2` padding.
    pub fn symmetric(kernel: usize, stride: usize, groups: usize) -> Self {
        let p = (kernel - 1) / 2;
        ConvSpec { stride, dilation: 1, pad_left: p, pad_right: p, groups }
    }

    /// No padding.
    pub fn valid(stride: usize) -> Self {
        ConvSpec { stride, dilation: 1, pad_left: 0, pad_right: 0, groups: 1 }
    }

    pub(crate) fn geom(&self, c_in: usize, c_out: usize, kernel: usize) -> ConvGeom {
        ConvGeom {
            c_in,
            c_out,
            kernel,
            stride: self.stride,
            dilation: self.dilation,
            groups: self.groups,
            pad_left: self.pad_left,
            pad_right: self.pad_right,
        }
    }
}

fn shape3<T: Float>(t: &Tensor<T>) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected a rank-3 tensor, got {s:?}");
    (s[0], s[1], s[2])
}

impl<T: Float> Tensor<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], move |ps, g, _| {
            vec![Some(ps[0].data().iter().zip(g).map(|(&x, &gv)| gv * df(x)).collect())]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(|v| v.max(T::zero()), |x| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::of_f64(slope);
        self.unary(move |v| if v > T::zero() { v } else { v * s }, move |x| if x > T::zero() { T::one() } else { s })
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|v| v.tanh(), |x| {
            let y = x.tanh();
            T::one() - y * y
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let sig = |v: T| T::one() / (T::one() + (-v).exp());
        self.unary(sig, move |x| {
            let y = sig(x);
            y * (T::one() - y)
        })
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone()], move |_, g, _| {
            vec![Some(g.iter().map(|&v| v * s).collect())]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a + *b).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], |_, g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a - *b).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], |_, g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.iter().map(|&v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a * *b).collect();
        Tensor::from_op(data, self.shape(), vec![self.clone(), other.clone()], |ps, g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(ps[1].data()).map(|(g, b)| *g * *b).collect()),
                needs[1].then(|| g.iter().zip(ps[0].data()).map(|(g, a)| *g * *a).collect()),
            ]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(shape.iter().product::<usize>(), self.numel(), "reshape: element count");
        Tensor::from_op(self.to_vec(), shape, vec![self.clone()], |_, g, _| vec![Some(g.to_vec())])
    }

    /// `out[i] = self[index[i]]`; the backward pass scatter-adds.
    pub fn gather(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Tensor<T> {
        assert_eq!(index.len(), shape.iter().product::<usize>());
        let src = self.data();
        let data = index.iter().map(|&i| src[i]).collect();
        let n = self.numel();
        Tensor::from_op(data, shape, vec![self.clone()], move |_, g, _| {
            let mut gx = vec![T::zero(); n];
            for (&i, &gv) in index.iter().zip(g) {
                gx[i] += gv;
            }
            vec![Some(gx)]
        })
    }

    /// Mean of all elements.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::of_usize(n.max(1));
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s * inv], &[1], vec![self.clone()], move |_, g, _| vec![Some(vec![g[0] * inv; n])])
    }

    /// `mean((self - target)^2)` for a constant target value.
    pub fn sq_dev_mean(&self, target: T) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::of_usize(n.max(1));
        let s: T = self.data().iter().map(|&v| (v - target) * (v - target)).sum();
        Tensor::from_op(vec![s * inv], &[1], vec![self.clone()], move |ps, g, _| {
            let two = T::of_f64(2.0);
            vec![Some(ps[0].data().iter().map(|&v| g[0] * two * (v - target) * inv).collect())]
        })
    }

    /// `mean(|self - other|)`.
    pub fn l1_mean(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "l1_mean: shape mismatch");
        let n = self.numel();
        let inv = T::one() / T::of_usize(n.max(1));
        let s: T = self.data().iter().zip(other.data()).map(|(a, b)| (*a - *b).abs()).sum();
        Tensor::from_op(vec![s * inv], &[1], vec![self.clone(), other.clone()], move |ps, g, needs| {
            let sign: Vec<T> = ps[0]
                .data()
                .iter()
                .zip(ps[1].data())
                .map(|(a, b)| {
                    let d = *a - *b;
                    if d > T::zero() {
                        g[0] * inv
                    } else if d < T::zero() {
                        -g[0] * inv
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let neg = needs[1].then(|| sign.iter().map(|&v| -v).collect());
            vec![needs[0].then_some(sign), neg]
        })
    }

    /// `sum_i w_i * t_i` over scalar tensors.
    pub fn weighted_sum(terms: &[(Tensor<T>, T)]) -> Tensor<T> {
        let mut s = T::zero();
        for (t, w) in terms {
            s += *w * t.item();
        }
        let weights: Vec<T> = terms.iter().map(|(_, w)| *w).collect();
        let parents = terms.iter().map(|(t, _)| t.clone()).collect();
        Tensor::from_op(vec![s], &[1], parents, move |_, g, needs| {
            weights.iter().zip(needs).map(|(w, &n)| n.then(|| vec![g[0] * *w])).collect()
        })
    }

    /// Concatenate `[B, C_i, L]` tensors along channels.
    pub fn cat_channels(parts: &[Tensor<T>]) -> Tensor<T> {
        let (b, _, l) = shape3(&parts[0]);
        let chans: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pb, c, pl) = shape3(p);
                assert!(pb == b && pl == l, "cat_channels: batch/time mismatch");
                c
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut data = Vec::with_capacity(b * total * l);
        for bi in 0..b {
            for (p, &c) in parts.iter().zip(&chans) {
                data.extend_from_slice(&p.data()[bi * c * l..(bi + 1) * c * l]);
            }
        }
        Tensor::from_op(data, &[b, total, l], parts.to_vec(), move |_, g, needs| {
            let mut out: Vec<Option<Vec<T>>> = needs.iter().zip(&chans).map(|(&n, &c)| n.then(|| Vec::with_capacity(b * c * l))).collect();
            for bi in 0..b {
                let mut off = bi * total * l;
                for (o, &c) in out.iter_mut().zip(&chans) {
                    if let Some(v) = o {
                        v.extend_from_slice(&g[off..off + c * l]);
                    }
                    off += c * l;
                }
            }
            out
        })
    }

    /// `[B, C, L] -> [B, C, len]` starting at `start`.
    pub fn slice_time(&self, start: usize, len: usize) -> Tensor<T> {
        let (b, c, l) = shape3(self);
        assert!(start + len <= l, "slice_time out of range");
        let mut data = Vec::with_capacity(b * c * len);
        for row in self.data().chunks(l.max(1)).take(b * c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::from_op(data, &[b, c, len], vec![self.clone()], move |_, g, _| {
            let mut gx = vec![T::zero(); b * c * l];
            for (r, grow) in g.chunks(len.max(1)).take(b * c).enumerate() {
                gx[r * l + start..r * l + start + len].copy_from_slice(grow);
            }
            vec![Some(gx)]
        })
    }

    /// Zero padding along time.
    pub fn pad_time(&self, left: usize, right: usize) -> Tensor<T> {
        let (b, c, l) = shape3(self);
        let nl = l + left + right;
        let mut data = vec![T::zero(); b * c * nl];
        for r in 0..b * c {
            data[r * nl + left..r * nl + left + l].copy_from_slice(&self.data()[r * l..(r + 1) * l]);
        }
        Tensor::from_op(data, &[b, c, nl], vec![self.clone()], move |_, g, _| {
            let mut gx = vec![T::zero(); b * c * l];
            for r in 0..b * c {
                gx[r * l..(r + 1) * l].copy_from_slice(&g[r * nl + left..r * nl + left + l]);
            }
            vec![Some(gx)]
        })
    }

    /// Mean over non-overlapping windows of two samples: `[B, C, L] -> [B, C, L/2]`.
    pub fn avg_pool2(&self) -> Tensor<T> {
        let (b, c, l) = shape3(self);
        let h = l / 2;
        let two = T::of_f64(2.0);
        let mut data = Vec::with_capacity(b * c * h);
        for r in 0..b * c {
            let row = &self.data()[r * l..(r + 1) * l];
            data.extend((0..h).map(|t| (row[2 * t] + row[2 * t + 1]) / two));
        }
        Tensor::from_op(data, &[b, c, h], vec![self.clone()], move |_, g, _| {
            let mut gx = vec![T::zero(); b * c * l];
            for r in 0..b * c {
                for t in 0..h {
                    let v = g[r * h + t] / two;
                    gx[r * l + 2 * t] = v;
                    gx[r * l + 2 * t + 1] = v;
                }
            }
            vec![Some(gx)]
        })
    }

    /// 1-D convolution. `self [B, C_in, L]`, `w [C_out, C_in / groups, K]`.
    pub fn conv1d(&self, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Tensor<T> {
        let (b, c_in, l_in) = shape3(self);
        let (c_out, cin_g, k) = shape3(w);
        assert_eq!(cin_g * spec.groups, c_in, "conv1d: channel mismatch");
        assert_eq!(c_out % spec.groups, 0, "conv1d: groups must divide output channels");
        let geom = spec.geom(c_in, c_out, k);
        let l_out = geom.out_len(l_in);
        let mut out = vec![T::zero(); b * c_out * l_out];
        for bi in 0..b {
            kernels::conv1d_forward(
                &self.data()[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                l_in,
                w.data(),
                bias.map(|t| t.data()),
                &geom,
                &mut out[bi * c_out * l_out..(bi + 1) * c_out * l_out],
            );
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        Tensor::from_op(out, &[b, c_out, l_out], parents, move |ps, g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * c_in * l_in]);
            let mut gw = needs[1].then(|| vec![T::zero(); ps[1].numel()]);
            let mut gb = (ps.len() > 2 && needs[2]).then(|| vec![T::zero(); c_out]);
            for bi in 0..b {
                kernels::conv1d_backward(
                    &ps[0].data()[bi * c_in * l_in..(bi + 1) * c_in * l_in],
                    l_in,
                    ps[1].data(),
                    &geom,
                    &g[bi * c_out * l_out..(bi + 1) * c_out * l_out],
                    gx.as_mut().map(|v| &mut v[bi * c_in * l_in..(bi + 1) * c_in * l_in]),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
            }
            let mut res = vec![gx, gw];
            if ps.len() > 2 {
                res.push(gb);
            }
            res
        })
    }

    /// Transposed convolution without padding whose overlapping tail is
    /// dropped, so `L` inputs give exactly `L * stride` outputs and output
    /// block `i` depends only on inputs `<= i`. `w [C_in, C_out, K]`.
    pub fn conv_transpose1d_causal(&self, w: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize) -> Tensor<T> {
        let (b, c_in, l) = shape3(self);
        let (wc_in, c_out, k) = shape3(w);
        assert_eq!(wc_in, c_in, "conv_transpose1d: channel mismatch");
        assert!(k >= stride, "conv_transpose1d: kernel shorter than stride");
        let out_len = l * stride;
        let mut out = vec![T::zero(); b * c_out * out_len];
        for bi in 0..b {
            let cols = kernels::convt_columns(&self.data()[bi * c_in * l..(bi + 1) * c_in * l], l, w.data(), c_in, c_out, k);
            let ob = &mut out[bi * c_out * out_len..(bi + 1) * c_out * out_len];
            kernels::convt_overlap_add(&cols, l, c_out, k, stride, ob, out_len);
            if let Some(bt) = bias {
                for (row, bv) in ob.chunks_mut(out_len.max(1)).zip(bt.data()) {
                    row.iter_mut().for_each(|v| *v += *bv);
                }
            }
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        Tensor::from_op(out, &[b, c_out, out_len], parents, move |ps, g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * c_in * l]);
            let mut gw = needs[1].then(|| vec![T::zero(); ps[1].numel()]);
            for bi in 0..b {
                let gout = &g[bi * c_out * out_len..(bi + 1) * c_out * out_len];
                kernels::convt_backward(
                    &ps[0].data()[bi * c_in * l..(bi + 1) * c_in * l],
                    l,
                    ps[1].data(),
                    c_in,
                    c_out,
                    k,
                    stride,
                    gout,
                    gx.as_mut().map(|v| &mut v[bi * c_in * l..(bi + 1) * c_in * l]),
                    gw.as_deref_mut(),
                );
            }
            let mut res = vec![gx, gw];
            if ps.len() > 2 {
                let gb = needs[2].then(|| {
                    let mut gb = vec![T::zero(); c_out];
                    for bi in 0..b {
                        for (co, gbv) in gb.iter_mut().enumerate() {
                            let s = (bi * c_out + co) * out_len;
                            *gbv += g[s..s + out_len].iter().copied().sum::<T>();
                        }
                    }
                    gb
                });
                res.push(gb);
            }
            res
        })
    }

    /// Gated recurrent unit with identity candidate activation, zero initial
    /// state. `self [B, I, T] -> [B, H, T]`; gate rows ordered (r, z, n).
    pub fn gru(&self, w_ih: &Tensor<T>, w_hh: &Tensor<T>, b_ih: &Tensor<T>, b_hh: &Tensor<T>) -> Tensor<T> {
        let (b, input, t_len) = shape3(self);
        let h3 = w_ih.dim(0);
        let hidden = h3 / 3;
        assert_eq!(w_ih.shape(), &[h3, input], "gru: w_ih shape");
        assert_eq!(w_hh.shape(), &[h3, hidden], "gru: w_hh shape");
        let track = [self, w_ih, w_hh, b_ih, b_hh].iter().any(|t| t.requires_grad());
        let mut out = vec![T::zero(); b * hidden * t_len];
        let mut caches = Vec::with_capacity(if track { b } else { 0 });
        let h0 = vec![T::zero(); hidden];
        for bi in 0..b {
            let xp = kernels::gru_project(
                &self.data()[bi * input * t_len..(bi + 1) * input * t_len],
                t_len,
                input,
                w_ih.data(),
                b_ih.data(),
                hidden,
            );
            let ob = &mut out[bi * hidden * t_len..(bi + 1) * hidden * t_len];
            if track {
                let mut cache = GruCache::default();
                kernels::gru_recur(&xp, t_len, hidden, &h0, w_hh.data(), b_hh.data(), ob, Some(&mut cache));
                caches.push(cache);
            } else {
                kernels::gru_recur(&xp, t_len, hidden, &h0, w_hh.data(), b_hh.data(), ob, None);
            }
        }
        let parents = vec![self.clone(), w_ih.clone(), w_hh.clone(), b_ih.clone(), b_hh.clone()];
        Tensor::from_op(out, &[b, hidden, t_len], parents, move |ps, g, needs| {
            let mut gx = needs[0].then(|| vec![T::zero(); b * input * t_len]);
            let mut gw_ih = needs[1].then(|| vec![T::zero(); h3 * input]);
            let mut gw_hh = needs[2].then(|| vec![T::zero(); h3 * hidden]);
            let mut gb_ih = needs[3].then(|| vec![T::zero(); h3]);
            let mut gb_hh = needs[4].then(|| vec![T::zero(); h3]);
            for (bi, cache) in caches.iter().enumerate() {
                let dxp = kernels::gru_recur_backward(
                    cache,
                    t_len,
                    hidden,
                    ps[2].data(),
                    &g[bi * hidden * t_len..(bi + 1) * hidden * t_len],
                    gw_hh.as_deref_mut(),
                    gb_hh.as_deref_mut(),
                );
                let xb = &ps[0].data()[bi * input * t_len..(bi + 1) * input * t_len];
                if let Some(gb) = gb_ih.as_mut() {
                    for (gv, row) in gb.iter_mut().zip(dxp.chunks(t_len.max(1))) {
                        *gv += row.iter().copied().sum::<T>();
                    }
                }
                if let Some(gw) = gw_ih.as_mut() {
                    kernels::gemm(h3, input, t_len, &dxp, false, xb, true, T::one(), gw);
                }
                if let Some(gxv) = gx.as_mut() {
                    kernels::gemm(
                        input,
                        t_len,
                        h3,
                        ps[1].data(),
                        true,
                        &dxp,
                        false,
                        T::zero(),
                        &mut gxv[bi * input * t_len..(bi + 1) * input * t_len],
                    );
                }
            }
            vec![gx, gw_ih, gw_hh, gb_ih, gb_hh]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central-difference check of d(loss)/d(input) for a scalar-valued graph.
    fn check_grad(shape: &[usize], x0: Vec<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>) {
        let x = Tensor::leaf(x0.clone(), shape, true);
        let loss = f(&x);
        let grads = loss.backward();
        let analytic = grads.get(&x).expect("gradient").to_vec();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fp = f(&Tensor::new(xp, shape)).item();
            let fm = f(&Tensor::new(xm, shape)).item();
            let numeric = (fp - fm) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3);
            assert!(err < 1e-4, "index {i}: numeric {numeric} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn conv1d_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::new(rand_vec(&mut rng, 4 * 2 * 3), &[4, 2, 3]);
        let bias = Tensor::new(rand_vec(&mut rng, 4), &[4]);
        let probe = Tensor::new(rand_vec(&mut rng, 2 * 4 * 5), &[2, 4, 5]);
        let spec = ConvSpec { stride: 2, dilation: 1, pad_left: 2, pad_right: 1, groups: 2 };
        check_grad(&[2, 4, 8], rand_vec(&mut rng, 64), |x| {
            let wg = Tensor::new(w.to_vec(), &[4, 2, 3]);
            x.conv1d(&wg, Some(&bias), spec).mul(&probe).mean()
        });
        // weight gradient
        let x = Tensor::new(rand_vec(&mut rng, 64), &[2, 4, 8]);
        check_grad(&[4, 2, 3], w.to_vec(), |wt| x.conv1d(wt, Some(&bias), spec).mul(&probe).mean());
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let w0 = rand_vec(&mut rng, 3 * 2 * 4);
        let probe = Tensor::new(rand_vec(&mut rng, 2 * 2 * 10), &[2, 2, 10]);
        let x = Tensor::new(rand_vec(&mut rng, 2 * 3 * 5), &[2, 3, 5]);
        check_grad(&[3, 2, 4], w0.clone(), |w| x.conv_transpose1d_causal(w, None, 2).mul(&probe).mean());
        let w = Tensor::new(w0, &[3, 2, 4]);
        check_grad(&[2, 3, 5], x.to_vec(), |xt| xt.conv_transpose1d_causal(&w, None, 2).mul(&probe).mean());
    }

    #[test]
    fn gru_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (i, h, t) = (3, 4, 6);
        let w_ih0 = rand_vec(&mut rng, 3 * h * i);
        let w_hh0 = rand_vec(&mut rng, 3 * h * h);
        let b_ih = Tensor::new(rand_vec(&mut rng, 3 * h), &[3 * h]);
        let b_hh = Tensor::new(rand_vec(&mut rng, 3 * h), &[3 * h]);
        let probe = Tensor::new(rand_vec(&mut rng, 2 * h * t), &[2, h, t]);
        let x0 = rand_vec(&mut rng, 2 * i * t);
        let w_ih = Tensor::new(w_ih0.clone(), &[3 * h, i]);
        let w_hh = Tensor::new(w_hh0.clone(), &[3 * h, h]);
        check_grad(&[2, i, t], x0.clone(), |x| x.gru(&w_ih, &w_hh, &b_ih, &b_hh).mul(&probe).mean());
        let x = Tensor::new(x0, &[2, i, t]);
        check_grad(&[3 * h, h], w_hh0, |w| x.gru(&w_ih, w, &b_ih, &b_hh).mul(&probe).mean());
        check_grad(&[3 * h, i], w_ih0, |w| x.gru(w, &w_hh, &b_ih, &b_hh).mul(&probe).mean());
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let other = Tensor::new(rand_vec(&mut rng, 2 * 2 * 6), &[2, 2, 6]);
        let probe = Tensor::new(rand_vec(&mut rng, 2 * 5 * 4), &[2, 5, 4]);
        check_grad(&[2, 3, 6], rand_vec(&mut rng, 36), |x| {
            let c = Tensor::cat_channels(&[x.tanh(), other.sigmoid()]);
            c.pad_time(1, 2).slice_time(3, 4).leaky_relu(0.1).mul(&probe).mean()
        });
        let target = Tensor::new(rand_vec(&mut rng, 12), &[1, 2, 6]);
        check_grad(&[1, 2, 12], rand_vec(&mut rng, 24), |x| {
            let p = x.avg_pool2();
            Tensor::weighted_sum(&[(p.l1_mean(&target), 2.0), (p.sq_dev_mean(1.0), 0.5)])
        });
    }
}
