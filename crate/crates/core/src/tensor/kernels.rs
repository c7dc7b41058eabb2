//! Slice-level compute kernels shared by the autodiff ops and the streaming
//! inference paths.

use super::Float;

/// `C[m x n] = A[m x k] * B[k x n] + beta * C`, row-major.
///
/// `a_trans`: `a` is stored as `[k x m]`. `b_trans`: `b` is stored as `[n x k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; c does not alias a or b (distinct borrows).
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 1-D convolution over a `[channels, time]` slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn out_len(&self, l_in: usize) -> usize {
        let padded = l_in + self.pad_left + self.pad_right;
        let span = (self.kernel - 1) * self.dilation + 1;
        if padded < span {
            0
        } else {
            (padded - span) / self.stride + 1
        }
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    #[cfg(test)]
    fn weight_len(&self) -> usize {
        self.c_out * self.cin_g() * self.kernel
    }
}

fn im2col<T: Float>(x: &[T], l_in: usize, g: &ConvGeom, l_out: usize, cols: &mut [T]) {
    for ci in 0..g.c_in {
        let xrow = &x[ci * l_in..(ci + 1) * l_in];
        for kk in 0..g.kernel {
            let row = &mut cols[(ci * g.kernel + kk) * l_out..(ci * g.kernel + kk + 1) * l_out];
            let off = kk * g.dilation;
            for (t, c) in row.iter_mut().enumerate() {
                let p = t * g.stride + off;
                *c = if p >= g.pad_left && p - g.pad_left < l_in { xrow[p - g.pad_left] } else { T::zero() };
            }
        }
    }
}

fn col2im_add<T: Float>(cols: &[T], l_in: usize, g: &ConvGeom, l_out: usize, x: &mut [T]) {
    for ci in 0..g.c_in {
        let xrow = &mut x[ci * l_in..(ci + 1) * l_in];
        for kk in 0..g.kernel {
            let row = &cols[(ci * g.kernel + kk) * l_out..(ci * g.kernel + kk + 1) * l_out];
            let off = kk * g.dilation;
            for (t, c) in row.iter().enumerate() {
                let p = t * g.stride + off;
                if p >= g.pad_left && p - g.pad_left < l_in {
                    xrow[p - g.pad_left] += *c;
                }
            }
        }
    }
}

/// One batch item: `x [c_in, l_in] -> out [c_out, l_out]`.
pub(crate) fn conv1d_forward<T: Float>(
    x: &[T],
    l_in: usize,
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
    out: &mut [T],
) {
    let l_out = g.out_len(l_in);
    if l_out == 0 {
        return;
    }
    let kk = g.cin_g() * g.kernel;
    let mut cols = vec![T::zero(); g.c_in * g.kernel * l_out];
    im2col(x, l_in, g, l_out, &mut cols);
    for gi in 0..g.groups {
        let co = g.cout_g();
        gemm(
            co,
            l_out,
            kk,
            &w[gi * co * kk..(gi + 1) * co * kk],
            false,
            &cols[gi * kk * l_out..(gi + 1) * kk * l_out],
            false,
            T::zero(),
            &mut out[gi * co * l_out..(gi + 1) * co * l_out],
        );
    }
    if let Some(b) = bias {
        for (row, bv) in out.chunks_mut(l_out).zip(b) {
            row.iter_mut().for_each(|v| *v += *bv);
        }
    }
}

/// Accumulating backward pass for one batch item.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Float>(
    x: &[T],
    l_in: usize,
    w: &[T],
    g: &ConvGeom,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let l_out = g.out_len(l_in);
    if l_out == 0 {
        return;
    }
    let kk = g.cin_g() * g.kernel;
    let co = g.cout_g();
    if let Some(gb) = grad_b {
        for (row, b) in grad_out.chunks(l_out).zip(gb.iter_mut()) {
            *b += row.iter().copied().sum::<T>();
        }
    }
    if let Some(gw) = grad_w {
        let mut cols = vec![T::zero(); g.c_in * g.kernel * l_out];
        im2col(x, l_in, g, l_out, &mut cols);
        for gi in 0..g.groups {
            gemm(
                co,
                kk,
                l_out,
                &grad_out[gi * co * l_out..(gi + 1) * co * l_out],
                false,
                &cols[gi * kk * l_out..(gi + 1) * kk * l_out],
                true,
                T::one(),
                &mut gw[gi * co * kk..(gi + 1) * co * kk],
            );
        }
    }
    if let Some(gx) = grad_x {
        let mut dcols = vec![T::zero(); g.c_in * g.kernel * l_out];
        for gi in 0..g.groups {
            gemm(
                kk,
                l_out,
                co,
                &w[gi * co * kk..(gi + 1) * co * kk],
                true,
                &grad_out[gi * co * l_out..(gi + 1) * co * l_out],
                false,
                T::zero(),
                &mut dcols[gi * kk * l_out..(gi + 1) * kk * l_out],
            );
        }
        col2im_add(&dcols, l_in, g, l_out, gx);
    }
}

/// Transposed convolution columns: `cols [c_out*k, l] = W^T x` with
/// `W [c_in, c_out, k]`.
pub(crate) fn convt_columns<T: Float>(x: &[T], l: usize, w: &[T], c_in: usize, c_out: usize, k: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); c_out * k * l];
    gemm(c_out * k, l, c_in, w, true, x, false, T::zero(), &mut cols);
    cols
}

/// Overlap-add of transposed-convolution columns into `out [c_out, out_len]`.
/// Contributions reach each output position in ascending input order.
pub(crate) fn convt_overlap_add<T: Float>(
    cols: &[T],
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    out: &mut [T],
    out_len: usize,
) {
    for co in 0..c_out {
        let orow = &mut out[co * out_len..(co + 1) * out_len];
        for i in 0..l {
            for kk in 0..k {
                let p = i * stride + kk;
                if p < out_len {
                    orow[p] += cols[(co * k + kk) * l + i];
                }
            }
        }
    }
}

/// Backward of the causal (tail-trimmed) transposed convolution for one item.
#[allow(clippy::too_many_arguments)]
pub(crate) fn convt_backward<T: Float>(
    x: &[T],
    l: usize,
    w: &[T],
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: Option<&mut [T]>,
) {
    let out_len = l * stride;
    let mut dcols = vec![T::zero(); c_out * k * l];
    for co in 0..c_out {
        let grow = &grad_out[co * out_len..(co + 1) * out_len];
        for kk in 0..k {
            let drow = &mut dcols[(co * k + kk) * l..(co * k + kk + 1) * l];
            for (i, d) in drow.iter_mut().enumerate() {
                let p = i * stride + kk;
                if p < out_len {
                    *d = grow[p];
                }
            }
        }
    }
    if let Some(gx) = grad_x {
        gemm(c_in, l, c_out * k, w, false, &dcols, false, T::one(), gx);
    }
    if let Some(gw) = grad_w {
        gemm(c_in, c_out * k, l, x, false, &dcols, true, T::one(), gw);
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Default, Clone)]
pub(crate) struct GruCache<T: Float> {
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub n: Vec<T>,
    pub hn: Vec<T>,
    pub h_prev: Vec<T>,
}

fn sigmoid<T: Float>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Input projection `xp [3h, t] = W_ih x + b_ih`.
pub(crate) fn gru_project<T: Float>(x: &[T], t_len: usize, input: usize, w_ih: &[T], b_ih: &[T], hidden: usize) -> Vec<T> {
    let mut xp = vec![T::zero(); 3 * hidden * t_len];
    gemm(3 * hidden, t_len, input, w_ih, false, x, false, T::zero(), &mut xp);
    for (row, b) in xp.chunks_mut(t_len.max(1)).zip(b_ih) {
        row.iter_mut().for_each(|v| *v += *b);
    }
    xp
}

/// Recurrence with an identity candidate activation:
/// `n = xn + r * (W_hn h + b_hn)`, `h' = (1 - z) n + z h`.
/// Writes `out [hidden, t_len]` and returns the final state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_recur<T: Float>(
    xp: &[T],
    t_len: usize,
    hidden: usize,
    h0: &[T],
    w_hh: &[T],
    b_hh: &[T],
    out: &mut [T],
    mut cache: Option<&mut GruCache<T>>,
) -> Vec<T> {
    let h3 = 3 * hidden;
    let mut h = h0.to_vec();
    let mut hp = vec![T::zero(); h3];
    if let Some(c) = cache.as_deref_mut() {
        for v in [&mut c.r, &mut c.z, &mut c.n, &mut c.hn, &mut c.h_prev] {
            v.clear();
            v.reserve(t_len * hidden);
        }
    }
    for t in 0..t_len {
        for (j, hpj) in hp.iter_mut().enumerate() {
            let row = &w_hh[j * hidden..(j + 1) * hidden];
            let mut acc = T::zero();
            for (wv, hv) in row.iter().zip(&h) {
                acc += *wv * *hv;
            }
            *hpj = acc + b_hh[j];
        }
        let mut hnew = vec![T::zero(); hidden];
        for i in 0..hidden {
            let r = sigmoid(xp[i * t_len + t] + hp[i]);
            let z = sigmoid(xp[(hidden + i) * t_len + t] + hp[hidden + i]);
            let hn = hp[2 * hidden + i];
            let n = xp[(2 * hidden + i) * t_len + t] + r * hn;
            hnew[i] = (T::one() - z) * n + z * h[i];
            if let Some(c) = cache.as_deref_mut() {
                c.r.push(r);
                c.z.push(z);
                c.n.push(n);
                c.hn.push(hn);
                c.h_prev.push(h[i]);
            }
        }
        for i in 0..hidden {
            out[i * t_len + t] = hnew[i];
        }
        h = hnew;
    }
    h
}

/// Backpropagation through time. Returns `dxp [3h, t]`; accumulates into
/// `grad_w_hh`/`grad_b_hh` when given.
pub(crate) fn gru_recur_backward<T: Float>(
    cache: &GruCache<T>,
    t_len: usize,
    hidden: usize,
    w_hh: &[T],
    grad_out: &[T],
    mut grad_w_hh: Option<&mut [T]>,
    mut grad_b_hh: Option<&mut [T]>,
) -> Vec<T> {
    let h3 = 3 * hidden;
    let mut dxp = vec![T::zero(); h3 * t_len];
    let mut dh = vec![T::zero(); hidden];
    let mut dhp = vec![T::zero(); h3];
    for t in (0..t_len).rev() {
        let base = t * hidden;
        for i in 0..hidden {
            dh[i] += grad_out[i * t_len + t];
        }
        let mut dh_prev = vec![T::zero(); hidden];
        for i in 0..hidden {
            let (r, z, n, hn, hprev) = (
                cache.r[base + i],
                cache.z[base + i],
                cache.n[base + i],
                cache.hn[base + i],
                cache.h_prev[base + i],
            );
            let d = dh[i];
            let dn = d * (T::one() - z);
            let dz = d * (hprev - n);
            dh_prev[i] = d * z;
            let dr = dn * hn;
            let dar = dr * r * (T::one() - r);
            let daz = dz * z * (T::one() - z);
            dhp[i] = dar;
            dhp[hidden + i] = daz;
            dhp[2 * hidden + i] = dn * r;
            dxp[i * t_len + t] = dar;
            dxp[(hidden + i) * t_len + t] = daz;
            dxp[(2 * hidden + i) * t_len + t] = dn;
        }
        for (j, dv) in dhp.iter().enumerate() {
            let row = &w_hh[j * hidden..(j + 1) * hidden];
            for (dp, wv) in dh_prev.iter_mut().zip(row) {
                *dp += *dv * *wv;
            }
        }
        if let Some(gw) = grad_w_hh.as_deref_mut() {
            let hprev = &cache.h_prev[base..base + hidden];
            for (j, dv) in dhp.iter().enumerate() {
                let row = &mut gw[j * hidden..(j + 1) * hidden];
                for (g, hv) in row.iter_mut().zip(hprev) {
                    *g += *dv * *hv;
                }
            }
        }
        if let Some(gb) = grad_b_hh.as_deref_mut() {
            gb.iter_mut().zip(&dhp).for_each(|(g, d)| *g += *d);
        }
        dh = dh_prev;
    }
    dxp
}
