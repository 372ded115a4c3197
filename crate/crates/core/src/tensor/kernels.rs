//! Shared forward/backward compute routines.
//!
//! The 2-D convolution is expressed as a *column* primitive: one output time
//! step from the `kt` input columns it covers. The batch path loops that
//! primitive over time and the streaming cascade calls it once per new
//! column, so both produce bit-identical values. Accumulation order inside
//! one output element is fixed (channel, time tap, freq tap) everywhere.
//!
//! Feature maps are laid out `[channels, time, freq]` row-major so the
//! innermost loops run over contiguous frequency slices.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{Scalar, Tensor};

/// Static description of a convolution layer.
///
/// Frequency axis: symmetric zero padding of `(kf - 1) / 2` (odd `kf`).
/// Time axis: `kt / 2` future taps and `kt - 1 - kt / 2` past taps, so the
/// output at time `t` sees inputs `[t - past, t + future]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kf: usize,
    pub kt: usize,
    pub f: usize,
}

impl ConvSpec {
    pub fn past(&self) -> usize {
        self.kt - 1 - self.kt / 2
    }

    pub fn future(&self) -> usize {
        self.kt / 2
    }

    fn pf(&self) -> usize {
        (self.kf - 1) / 2
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kf * self.kt
    }
}

/// Borrowed view of one time column of a `[C, T, F]` map: channel `c`
/// occupies `data[c * chan_stride .. c * chan_stride + F]`.
#[derive(Clone, Copy)]
pub struct ColView<'a, T> {
    pub data: &'a [T],
    pub chan_stride: usize,
}

/// Compute a single output column. `cols[dt]` is the input column at time
/// `t + dt - past`, or `None` when that column falls before the start or
/// after the end of the sequence (zero padding contributes nothing).
pub fn conv_col<T: Scalar>(
    spec: &ConvSpec,
    w: &[T],
    b: &[T],
    cols: &[Option<ColView<'_, T>>],
    out: &mut [T],
    out_chan_stride: usize,
) {
    debug_assert_eq!(cols.len(), spec.kt);
    debug_assert_eq!(w.len(), spec.weight_len());
    let (f, kf, kt, pf) = (spec.f, spec.kf, spec.kt, spec.pf());
    for co in 0..spec.c_out {
        let oc = &mut out[co * out_chan_stride..][..f];
        oc.fill(b[co]);
        for ci in 0..spec.c_in {
            let wbase = ((co * spec.c_in + ci) * kf) * kt;
            for dt in 0..kt {
                let Some(col) = cols[dt] else { continue };
                let ic = &col.data[ci * col.chan_stride..][..f];
                for df in 0..kf {
                    let wv = w[wbase + df * kt + dt];
                    let lo = pf.saturating_sub(df);
                    let hi = (f + pf - df).min(f);
                    for fo in lo..hi {
                        oc[fo] = oc[fo] + wv * ic[fo + df - pf];
                    }
                }
            }
        }
    }
}

/// Batch convolution over a whole `[C_in, T, F]` map.
pub fn conv2d_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, spec: &ConvSpec) -> Tensor<T> {
    let t_len = x.shape()[1];
    debug_assert_eq!(x.shape(), &[spec.c_in, t_len, spec.f]);
    let mut out = Tensor::zeros(&[spec.c_out, t_len, spec.f]);
    let (past, f) = (spec.past(), spec.f);
    let mut cols: Vec<Option<ColView<'_, T>>> = vec![None; spec.kt];
    for t in 0..t_len {
        for (dt, slot) in cols.iter_mut().enumerate() {
            let tt = t as isize + dt as isize - past as isize;
            *slot = if tt >= 0 && (tt as usize) < t_len {
                Some(ColView { data: &x.data()[tt as usize * f..], chan_stride: t_len * f })
            } else {
                None
            };
        }
        conv_col(spec, w.data(), b.data(), &cols, &mut out.data_mut()[t * f..], t_len * f);
    }
    out
}

/// Gradients of the batch convolution.
pub fn conv2d_bwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let t_len = x.shape()[1];
    let (f, kf, kt, pf, past) = (spec.f, spec.kf, spec.kt, spec.pf(), spec.past());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[spec.c_out]);

    for co in 0..spec.c_out {
        let mut acc = T::zero();
        for v in &dy.data()[co * t_len * f..(co + 1) * t_len * f] {
            acc = acc + *v;
        }
        db.data_mut()[co] = acc;
    }

    let xs = x.data();
    let dys = dy.data();
    for co in 0..spec.c_out {
        for ci in 0..spec.c_in {
            for df in 0..kf {
                let lo = pf.saturating_sub(df);
                let hi = (f + pf - df).min(f);
                for dt in 0..kt {
                    let mut acc = T::zero();
                    for t in 0..t_len {
                        let tt = t as isize + dt as isize - past as isize;
                        if tt < 0 || tt as usize >= t_len {
                            continue;
                        }
                        let dyr = &dys[(co * t_len + t) * f..][..f];
                        let xr = &xs[(ci * t_len + tt as usize) * f..][..f];
                        for fo in lo..hi {
                            acc = acc + dyr[fo] * xr[fo + df - pf];
                        }
                    }
                    dw.data_mut()[((co * spec.c_in + ci) * kf + df) * kt + dt] = acc;
                }
            }
        }
    }

    let ws = w.data();
    let dxs = dx.data_mut();
    for ci in 0..spec.c_in {
        for s in 0..t_len {
            let dxr = &mut dxs[(ci * t_len + s) * f..][..f];
            for co in 0..spec.c_out {
                for dt in 0..kt {
                    let t = s as isize - dt as isize + past as isize;
                    if t < 0 || t as usize >= t_len {
                        continue;
                    }
                    let dyr = &dys[(co * t_len + t as usize) * f..][..f];
                    for df in 0..kf {
                        let wv = ws[((co * spec.c_in + ci) * kf + df) * kt + dt];
                        // input freq g receives from output g + pf - df
                        let lo = df.saturating_sub(pf);
                        let hi = (f + df).saturating_sub(pf).min(f);
                        for g in lo..hi {
                            dxr[g] = dxr[g] + wv * dyr[g + pf - df];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max-pool by 2 along the innermost (frequency) axis. Returns the pooled
/// map and a mask of which of the two candidates won (0 = even index; ties
/// keep the first).
pub fn maxpool_f2_fwd<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (c, t_len, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert_eq!(f % 2, 0);
    let fo = f / 2;
    let mut y = Tensor::zeros(&[c, t_len, fo]);
    let mut mask = vec![0u8; c * t_len * fo];
    let xs = x.data();
    let ys = y.data_mut();
    for ct in 0..c * t_len {
        let xr = &xs[ct * f..][..f];
        let yr = &mut ys[ct * fo..][..fo];
        let mr = &mut mask[ct * fo..][..fo];
        for k in 0..fo {
            let (a, b) = (xr[2 * k], xr[2 * k + 1]);
            if b > a {
                yr[k] = b;
                mr[k] = 1;
            } else {
                yr[k] = a;
            }
        }
    }
    (y, mask)
}

pub fn maxpool_f2_bwd<T: Scalar>(dy: &Tensor<T>, mask: &[u8], in_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let fo = dy.shape()[2];
    let f = in_shape[2];
    let dys = dy.data();
    let dxs = dx.data_mut();
    for ct in 0..in_shape[0] * in_shape[1] {
        for k in 0..fo {
            let src = ct * fo + k;
            dxs[ct * f + 2 * k + mask[src] as usize] = dys[src];
        }
    }
    dx
}

/// Affine map over the last axis: `y[r, o] = b[o] + Σ_i x[r, i] w[o, i]`.
pub fn linear_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n_in = x.last_dim();
    let (n_out, wn_in) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(n_in, wn_in);
    let rows = x.leading();
    let mut shape: Vec<usize> = x.shape().to_vec();
    *shape.last_mut().unwrap() = n_out;
    let mut y = Tensor::zeros(&shape);
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    let ys = y.data_mut();
    for r in 0..rows {
        let xr = &xs[r * n_in..][..n_in];
        let yr = &mut ys[r * n_out..][..n_out];
        for o in 0..n_out {
            let wr = &ws[o * n_in..][..n_in];
            let mut acc = bs[o];
            for i in 0..n_in {
                acc = acc + xr[i] * wr[i];
            }
            yr[o] = acc;
        }
    }
    y
}

pub fn linear_bwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n_in = x.last_dim();
    let n_out = w.shape()[0];
    let rows = x.leading();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[n_out]);
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    {
        let dbs = db.data_mut();
        for r in 0..rows {
            let dyr = &dys[r * n_out..][..n_out];
            for o in 0..n_out {
                dbs[o] = dbs[o] + dyr[o];
            }
        }
    }
    {
        let dxs = dx.data_mut();
        for r in 0..rows {
            let dyr = &dys[r * n_out..][..n_out];
            let dxr = &mut dxs[r * n_in..][..n_in];
            for o in 0..n_out {
                let g = dyr[o];
                if g == T::zero() {
                    continue;
                }
                let wr = &ws[o * n_in..][..n_in];
                for i in 0..n_in {
                    dxr[i] = dxr[i] + g * wr[i];
                }
            }
        }
    }
    {
        let dws = dw.data_mut();
        for r in 0..rows {
            let dyr = &dys[r * n_out..][..n_out];
            let xr = &xs[r * n_in..][..n_in];
            for o in 0..n_out {
                let g = dyr[o];
                if g == T::zero() {
                    continue;
                }
                let dwr = &mut dws[o * n_in..][..n_in];
                for i in 0..n_in {
                    dwr[i] = dwr[i] + g * xr[i];
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn relu_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

pub fn relu_bwd<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = sigmoid_scalar(*v);
    }
    y
}

pub fn sigmoid_bwd<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d = *d * *v * (T::one() - *v);
    }
    dx
}

pub fn tanh_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.tanh();
    }
    y
}

pub fn tanh_bwd<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        *d = *d * (T::one() - *v * *v);
    }
    dx
}

/// Softmax over the last axis, stabilized by max subtraction.
pub fn softmax_last_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.last_dim();
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(k) {
        let mut m = row[0];
        for v in row.iter().skip(1) {
            if *v > m {
                m = *v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    y
}

pub fn softmax_last_bwd<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let k = y.last_dim();
    let mut dx = dy.clone();
    for (dr, yr) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
        let mut dot = T::zero();
        for (d, v) in dr.iter().zip(yr.iter()) {
            dot = dot + *d * *v;
        }
        for (d, v) in dr.iter_mut().zip(yr.iter()) {
            *d = *v * (*d - dot);
        }
    }
    dx
}

/// Per-channel affine modulation: `y[c, t, f] = gamma[f, c] * x[c, t, f] + beta[f, c]`.
pub fn film_fwd<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let (c, t_len, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert_eq!(gamma.shape(), &[f, c]);
    debug_assert_eq!(beta.shape(), &[f, c]);
    let mut y = Tensor::zeros(x.shape());
    let (xs, gs, bs) = (x.data(), gamma.data(), beta.data());
    let ys = y.data_mut();
    for ch in 0..c {
        for t in 0..t_len {
            let off = (ch * t_len + t) * f;
            for k in 0..f {
                ys[off + k] = gs[k * c + ch] * xs[off + k] + bs[k * c + ch];
            }
        }
    }
    y
}

pub fn film_bwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (c, t_len, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[f, c]);
    let mut dbeta = Tensor::zeros(&[f, c]);
    let (xs, gs, dys) = (x.data(), gamma.data(), dy.data());
    let dxs = dx.data_mut();
    let dgs = dgamma.data_mut();
    let dbs = dbeta.data_mut();
    for ch in 0..c {
        for t in 0..t_len {
            let off = (ch * t_len + t) * f;
            for k in 0..f {
                let g = dys[off + k];
                dxs[off + k] = gs[k * c + ch] * g;
                dgs[k * c + ch] = dgs[k * c + ch] + g * xs[off + k];
                dbs[k * c + ch] = dbs[k * c + ch] + g;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Cached gate activations of one LSTM step.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub i: Vec<T>,
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub o: Vec<T>,
    pub tc: Vec<T>,
}

/// One step of a standard LSTM cell over a batch.
///
/// Inputs: `x [B, I]`, `h [B, H]`, `c [B, H]`, `w_ih [4H, I]`, `w_hh [4H, H]`,
/// `bias [4H]` with gate order (input, forget, cell, output). The result
/// packs the next hidden and cell states as `[B, 2H]` (`h'` then `c'` per
/// row).
pub fn lstm_cell_fwd<T: Scalar>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    bias: &Tensor<T>,
) -> (Tensor<T>, LstmCache<T>) {
    let batch = x.shape()[0];
    let n_in = x.shape()[1];
    let hidden = h.shape()[1];
    debug_assert_eq!(w_ih.shape(), &[4 * hidden, n_in]);
    debug_assert_eq!(w_hh.shape(), &[4 * hidden, hidden]);
    let mut packed = Tensor::zeros(&[batch, 2 * hidden]);
    let mut cache = LstmCache {
        i: vec![T::zero(); batch * hidden],
        f: vec![T::zero(); batch * hidden],
        g: vec![T::zero(); batch * hidden],
        o: vec![T::zero(); batch * hidden],
        tc: vec![T::zero(); batch * hidden],
    };
    let (xs, hs, cs) = (x.data(), h.data(), c.data());
    let (wi, wh, bs) = (w_ih.data(), w_hh.data(), bias.data());
    for b in 0..batch {
        let xr = &xs[b * n_in..][..n_in];
        let hr = &hs[b * hidden..][..hidden];
        let cr = &cs[b * hidden..][..hidden];
        let out = &mut packed.data_mut()[b * 2 * hidden..][..2 * hidden];
        for u in 0..hidden {
            let mut pre = [T::zero(); 4];
            for (gate, p) in pre.iter_mut().enumerate() {
                let row = gate * hidden + u;
                let mut acc = bs[row];
                let wir = &wi[row * n_in..][..n_in];
                for i in 0..n_in {
                    acc = acc + wir[i] * xr[i];
                }
                let whr = &wh[row * hidden..][..hidden];
                for i in 0..hidden {
                    acc = acc + whr[i] * hr[i];
                }
                *p = acc;
            }
            let gi = sigmoid_scalar(pre[0]);
            let gf = sigmoid_scalar(pre[1]);
            let gg = pre[2].tanh();
            let go = sigmoid_scalar(pre[3]);
            let cn = gf * cr[u] + gi * gg;
            let tc = cn.tanh();
            let idx = b * hidden + u;
            cache.i[idx] = gi;
            cache.f[idx] = gf;
            cache.g[idx] = gg;
            cache.o[idx] = go;
            cache.tc[idx] = tc;
            out[u] = go * tc;
            out[hidden + u] = cn;
        }
    }
    (packed, cache)
}

#[allow(clippy::too_many_arguments)]
#[allow(clippy::type_complexity)]
pub fn lstm_cell_bwd<T: Scalar>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    cache: &LstmCache<T>,
    dpacked: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
    let batch = x.shape()[0];
    let n_in = x.shape()[1];
    let hidden = h.shape()[1];
    let mut dx = Tensor::zeros(x.shape());
    let mut dh = Tensor::zeros(h.shape());
    let mut dc = Tensor::zeros(c.shape());
    let mut dwi = Tensor::zeros(w_ih.shape());
    let mut dwh = Tensor::zeros(w_hh.shape());
    let mut db = Tensor::zeros(&[4 * hidden]);
    let (xs, hs, cs) = (x.data(), h.data(), c.data());
    let (wi, wh) = (w_ih.data(), w_hh.data());
    let dps = dpacked.data();
    let mut dpre = vec![T::zero(); 4];
    for b in 0..batch {
        let xr = &xs[b * n_in..][..n_in];
        let hr = &hs[b * hidden..][..hidden];
        for u in 0..hidden {
            let idx = b * hidden + u;
            let (gi, gf, gg, go, tc) =
                (cache.i[idx], cache.f[idx], cache.g[idx], cache.o[idx], cache.tc[idx]);
            let dhn = dps[b * 2 * hidden + u];
            let dcn_ext = dps[b * 2 * hidden + hidden + u];
            let dgo = dhn * tc;
            let dcn = dcn_ext + dhn * go * (T::one() - tc * tc);
            let dgf = dcn * cs[idx];
            dc.data_mut()[idx] = dcn * gf;
            let dgi = dcn * gg;
            let dgg = dcn * gi;
            dpre[0] = dgi * gi * (T::one() - gi);
            dpre[1] = dgf * gf * (T::one() - gf);
            dpre[2] = dgg * (T::one() - gg * gg);
            dpre[3] = dgo * go * (T::one() - go);
            for (gate, &dp) in dpre.iter().enumerate() {
                if dp == T::zero() {
                    continue;
                }
                let row = gate * hidden + u;
                let dbs = db.data_mut();
                dbs[row] = dbs[row] + dp;
                {
                    let wir = &wi[row * n_in..][..n_in];
                    let dxr = &mut dx.data_mut()[b * n_in..][..n_in];
                    for i in 0..n_in {
                        dxr[i] = dxr[i] + dp * wir[i];
                    }
                }
                {
                    let whr = &wh[row * hidden..][..hidden];
                    let dhr = &mut dh.data_mut()[b * hidden..][..hidden];
                    for i in 0..hidden {
                        dhr[i] = dhr[i] + dp * whr[i];
                    }
                }
                {
                    let dwir = &mut dwi.data_mut()[row * n_in..][..n_in];
                    for i in 0..n_in {
                        dwir[i] = dwir[i] + dp * xr[i];
                    }
                }
                {
                    let dwhr = &mut dwh.data_mut()[row * hidden..][..hidden];
                    for i in 0..hidden {
                        dwhr[i] = dwhr[i] + dp * hr[i];
                    }
                }
            }
        }
    }
    (dx, dh, dc, dwi, dwh, db)
}

pub const FOCAL_EPS: f64 = 1e-12;

/// Mean focal loss over rows of a `[R, K]` probability tensor.
pub fn focal_fwd<T: Scalar>(p: &Tensor<T>, targets: &[usize], alpha: T, gamma: T) -> T {
    let k = p.last_dim();
    let rows = p.leading();
    debug_assert_eq!(rows, targets.len());
    let eps = T::from_f64(FOCAL_EPS);
    let mut acc = T::zero();
    for (r, &t) in targets.iter().enumerate() {
        let pt = p.data()[r * k + t].max(eps);
        acc = acc + -(alpha * (T::one() - pt).powf(gamma) * pt.ln());
    }
    acc / T::from_usize(rows)
}

pub fn focal_bwd<T: Scalar>(p: &Tensor<T>, targets: &[usize], alpha: T, gamma: T, dloss: T) -> Tensor<T> {
    let k = p.last_dim();
    let rows = p.leading();
    let eps = T::from_f64(FOCAL_EPS);
    let scale = dloss / T::from_usize(rows);
    let mut dp = Tensor::zeros(p.shape());
    for (r, &t) in targets.iter().enumerate() {
        let raw = p.data()[r * k + t];
        if raw < eps {
            continue; // clamped region: no gradient
        }
        let pt = raw;
        let om = T::one() - pt;
        // d/dpt of -alpha (1-pt)^gamma ln(pt)
        let d = -alpha * (om.powf(gamma) / pt - gamma * om.powf(gamma - T::one()) * pt.ln());
        dp.data_mut()[r * k + t] = scale * d;
    }
    dp
}

/// Mean squared error over masked cells; the denominator is
/// `max(1, #selected)` so an empty mask yields zero loss.
pub fn masked_l2_fwd<T: Scalar>(pred: &Tensor<T>, target: &[T], mask: &[bool]) -> T {
    debug_assert_eq!(pred.numel(), target.len());
    debug_assert_eq!(pred.numel(), mask.len());
    let mut acc = T::zero();
    let mut count = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            let d = pred.data()[i] - target[i];
            acc = acc + d * d;
            count += 1;
        }
    }
    acc / T::from_usize(count.max(1))
}

pub fn masked_l2_bwd<T: Scalar>(pred: &Tensor<T>, target: &[T], mask: &[bool], dloss: T) -> Tensor<T> {
    let count = mask.iter().filter(|&&m| m).count().max(1);
    let scale = dloss * T::from_f64(2.0) / T::from_usize(count);
    let mut dp = Tensor::zeros(pred.shape());
    for i in 0..mask.len() {
        if mask[i] {
            dp.data_mut()[i] = scale * (pred.data()[i] - target[i]);
        }
    }
    dp
}

/// Sliding-window gather for the multistep FC: from `x [M, P*h]` build
/// `y [n_out, P, w_steps*h]` with `y[t, p, s*h + j] = x[t + s, p*h + j]`.
pub fn multistep_gather_fwd<T: Scalar>(
    x: &Tensor<T>,
    pitches: usize,
    h: usize,
    w_steps: usize,
    n_out: usize,
) -> Tensor<T> {
    let m = x.shape()[0];
    debug_assert_eq!(x.shape()[1], pitches * h);
    debug_assert!(n_out + w_steps - 1 <= m);
    let mut y = Tensor::zeros(&[n_out, pitches, w_steps * h]);
    let xs = x.data();
    let ys = y.data_mut();
    for t in 0..n_out {
        for p in 0..pitches {
            for s in 0..w_steps {
                let src = &xs[(t + s) * pitches * h + p * h..][..h];
                let dst = &mut ys[(t * pitches + p) * w_steps * h + s * h..][..h];
                dst.copy_from_slice(src);
            }
        }
    }
    y
}

pub fn multistep_gather_bwd<T: Scalar>(
    dy: &Tensor<T>,
    m: usize,
    pitches: usize,
    h: usize,
    w_steps: usize,
) -> Tensor<T> {
    let n_out = dy.shape()[0];
    let mut dx = Tensor::zeros(&[m, pitches * h]);
    let dys = dy.data();
    for t in 0..n_out {
        for p in 0..pitches {
            for s in 0..w_steps {
                let src = &dys[(t * pitches + p) * w_steps * h + s * h..][..h];
                let dst = &mut dx.data_mut()[(t + s) * pitches * h + p * h..][..h];
                for j in 0..h {
                    dst[j] = dst[j] + src[j];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    /// Direct six-nested-loop convolution, independent of the kernel path.
    fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let t_len = x.shape()[1];
        let pf = (spec.kf - 1) / 2;
        let past = spec.past();
        let mut out = Tensor::zeros(&[spec.c_out, t_len, spec.f]);
        for co in 0..spec.c_out {
            for t in 0..t_len as isize {
                for f in 0..spec.f as isize {
                    let mut acc = b.at(&[co]);
                    for ci in 0..spec.c_in {
                        for df in 0..spec.kf as isize {
                            for dt in 0..spec.kt as isize {
                                let tt = t + dt - past as isize;
                                let ff = f + df - pf as isize;
                                if tt < 0 || tt >= t_len as isize || ff < 0 || ff >= spec.f as isize {
                                    continue;
                                }
                                acc += w.at(&[co, ci, df as usize, dt as usize])
                                    * x.at(&[ci, tt as usize, ff as usize]);
                            }
                        }
                    }
                    out.set(&[co, t as usize, f as usize], acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        let spec = ConvSpec { c_in: 1, c_out: 1, kf: 1, kt: 1, f: 5 };
        let x = Tensor::<f64>::from_fn(&[1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let w = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_fwd(&x, &w, &b, &spec);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_ones_kernel_spreads_impulse() {
        // one-hot input, all-ones 3x3 kernel: a 3x3 plateau of ones around the hot cell
        let spec = ConvSpec { c_in: 1, c_out: 1, kf: 3, kt: 3, f: 7 };
        let mut x = Tensor::<f64>::zeros(&[1, 6, 7]);
        x.set(&[0, 3, 4], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_fwd(&x, &w, &b, &spec);
        for t in 0..6 {
            for f in 0..7 {
                let expect = if (2..=4).contains(&t) && (3..=5).contains(&f) { 1.0 } else { 0.0 };
                assert_eq!(y.at(&[0, t, f]), expect, "t={t} f={f}");
            }
        }
    }

    #[test]
    fn conv_matches_reference_on_random_input() {
        let mut r = rng(7);
        for &(kf, kt) in &[(1usize, 1usize), (3, 3), (3, 1), (5, 5), (3, 5)] {
            let spec = ConvSpec { c_in: 4, c_out: 3, kf, kt, f: 5 };
            let x = rand_tensor(&mut r, &[4, 6, 5]);
            let w = rand_tensor(&mut r, &[3, 4, kf, kt]);
            let b = rand_tensor(&mut r, &[3]);
            let got = conv2d_fwd(&x, &w, &b, &spec);
            let want = conv_reference(&x, &w, &b, &spec);
            assert!(got.max_abs_diff(&want) <= 1e-10, "kf={kf} kt={kt}");
        }
    }

    #[test]
    fn maxpool_matches_bruteforce_and_keeps_time() {
        let mut r = rng(9);
        let x = rand_tensor(&mut r, &[3, 4, 8]);
        let (y, _) = maxpool_f2_fwd(&x);
        assert_eq!(y.shape(), &[3, 4, 4]);
        for c in 0..3 {
            for t in 0..4 {
                for k in 0..4 {
                    let want = x.at(&[c, t, 2 * k]).max(x.at(&[c, t, 2 * k + 1]));
                    assert_eq!(y.at(&[c, t, k]), want);
                }
            }
        }
    }

    #[test]
    fn maxpool_constant_rows() {
        let x = Tensor::<f32>::filled(&[1, 3, 2], 2.5);
        let (y, mask) = maxpool_f2_fwd(&x);
        assert_eq!(y.shape(), &[1, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        // ties keep the first index
        assert!(mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn pool_chain_700_to_175() {
        let x = Tensor::<f32>::zeros(&[2, 3, 700]);
        let (a, _) = maxpool_f2_fwd(&x);
        let (b, _) = maxpool_f2_fwd(&a);
        assert_eq!(b.shape(), &[2, 3, 175]);
    }

    #[test]
    fn linear_identity_and_affine() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear_fwd(&x, &w, &b), x);

        let x1 = Tensor::<f64>::new(&[1, 1], alloc::vec![5.0]).unwrap();
        let w1 = Tensor::new(&[1, 1], alloc::vec![2.0]).unwrap();
        let b1 = Tensor::new(&[1], alloc::vec![3.0]).unwrap();
        assert_eq!(linear_fwd(&x1, &w1, &b1).item(), 13.0);
    }

    #[test]
    fn linear_matches_dot_oracle() {
        let mut r = rng(11);
        let x = rand_tensor(&mut r, &[2, 3, 7]);
        let w = rand_tensor(&mut r, &[4, 7]);
        let b = rand_tensor(&mut r, &[4]);
        let y = linear_fwd(&x, &w, &b);
        assert_eq!(y.shape(), &[2, 3, 4]);
        for r0 in 0..2 {
            for r1 in 0..3 {
                for o in 0..4 {
                    let mut want = b.at(&[o]);
                    for i in 0..7 {
                        want += x.at(&[r0, r1, i]) * w.at(&[o, i]);
                    }
                    assert!((y.at(&[r0, r1, o]) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let z = Tensor::<f64>::zeros(&[1, 5]);
        let y = softmax_last_fwd(&z);
        for v in y.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let big = Tensor::<f64>::filled(&[1, 3], 1000.0);
        let yb = softmax_last_fwd(&big);
        for v in yb.data() {
            assert!(v.is_finite());
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng(13);
        let x = rand_tensor(&mut r, &[40, 5]);
        let y = softmax_last_fwd(&x);
        for row in y.data().chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn relu_clamps() {
        let x = Tensor::<f32>::new(&[2], alloc::vec![-3.0, 3.0]).unwrap();
        let y = relu_fwd(&x);
        assert_eq!(y.data(), &[0.0, 3.0]);
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let x = Tensor::<f64>::filled(&[1, 3], 0.7);
        let h = Tensor::zeros(&[1, 2]);
        let c = Tensor::zeros(&[1, 2]);
        let wi = Tensor::zeros(&[8, 3]);
        let wh = Tensor::zeros(&[8, 2]);
        let b = Tensor::zeros(&[8]);
        let (packed, _) = lstm_cell_fwd(&x, &h, &c, &wi, &wh, &b);
        assert!(packed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_forget_bias_limit_preserves_cell() {
        // forget bias 50 ~ sigmoid saturated to 1, zero weights: c' ≈ c
        let hidden = 4;
        let x = Tensor::<f64>::filled(&[1, 3], 0.3);
        let h = Tensor::filled(&[1, hidden], -0.2);
        let c = Tensor::from_fn(&[1, hidden], |i| 0.1 * (i as f64 + 1.0));
        let wi = Tensor::zeros(&[4 * hidden, 3]);
        let wh = Tensor::zeros(&[4 * hidden, hidden]);
        let mut b = Tensor::zeros(&[4 * hidden]);
        for u in 0..hidden {
            b.set(&[hidden + u], 50.0);
        }
        let (packed, _) = lstm_cell_fwd(&x, &h, &c, &wi, &wh, &b);
        for u in 0..hidden {
            let cn = packed.at(&[0, hidden + u]);
            assert!((cn - c.at(&[0, u])).abs() <= 1e-8);
        }
    }

    #[test]
    fn lstm_matches_scalar_equation_oracle() {
        let mut r = rng(17);
        let (batch, n_in, hidden) = (3, 4, 5);
        let x = rand_tensor(&mut r, &[batch, n_in]);
        let h = rand_tensor(&mut r, &[batch, hidden]);
        let c = rand_tensor(&mut r, &[batch, hidden]);
        let wi = rand_tensor(&mut r, &[4 * hidden, n_in]);
        let wh = rand_tensor(&mut r, &[4 * hidden, hidden]);
        let b = rand_tensor(&mut r, &[4 * hidden]);
        let (packed, _) = lstm_cell_fwd(&x, &h, &c, &wi, &wh, &b);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for bi in 0..batch {
            for u in 0..hidden {
                let pre = |gate: usize| {
                    let row = gate * hidden + u;
                    let mut acc = b.at(&[row]);
                    for i in 0..n_in {
                        acc += wi.at(&[row, i]) * x.at(&[bi, i]);
                    }
                    for i in 0..hidden {
                        acc += wh.at(&[row, i]) * h.at(&[bi, i]);
                    }
                    acc
                };
                let (gi, gf, gg, go) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
                let cn = gf * c.at(&[bi, u]) + gi * gg;
                let hn = go * cn.tanh();
                assert!((packed.at(&[bi, u]) - hn).abs() <= 1e-10);
                assert!((packed.at(&[bi, hidden + u]) - cn).abs() <= 1e-10);
                assert!(hn.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn focal_closed_forms() {
        // p_t = 1 → 0
        let p = Tensor::<f64>::new(&[1, 2], alloc::vec![1.0, 0.0]).unwrap();
        assert_eq!(focal_fwd(&p, &[0], 1.0, 2.0), 0.0);
        // p_t = 0.5, α=1, γ=2 → 0.25·ln 2
        let p = Tensor::<f64>::new(&[1, 2], alloc::vec![0.5, 0.5]).unwrap();
        let want = 0.25 * core::f64::consts::LN_2;
        assert!((focal_fwd(&p, &[0], 1.0, 2.0) - want).abs() <= 1e-12);
        assert!((focal_fwd(&p, &[0], 1.0, 2.0) - 0.173_286).abs() <= 1e-6);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let mut r = rng(23);
        let logits = rand_tensor(&mut r, &[40, 5]);
        let p = softmax_last_fwd(&logits);
        let targets: Vec<usize> = (0..40).map(|_| r.gen_range(0..5)).collect();
        let focal = focal_fwd(&p, &targets, 1.0, 0.0);
        let mut ce = 0.0;
        for (row, &t) in targets.iter().enumerate() {
            ce -= p.at(&[row, t]).ln();
        }
        ce /= 40.0;
        assert!((focal - ce).abs() <= 1e-12);
    }

    #[test]
    fn masked_l2_cases() {
        let pred = Tensor::<f64>::new(&[2], alloc::vec![0.5, 0.9]).unwrap();
        let target = [0.7, 0.1];
        assert_eq!(masked_l2_fwd(&pred, &target, &[false, false]), 0.0);
        let single = masked_l2_fwd(&pred, &target, &[true, false]);
        assert!((single - 0.04).abs() <= 1e-12);
    }

    #[test]
    fn masked_l2_matches_loop_oracle() {
        let mut r = rng(29);
        let pred = rand_tensor(&mut r, &[37]);
        let target: Vec<f64> = (0..37).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..37).map(|_| r.gen_bool(0.4)).collect();
        let got = masked_l2_fwd(&pred, &target, &mask);
        let mut acc = 0.0;
        let mut n = 0;
        for i in 0..37 {
            if mask[i] {
                acc += (pred.data()[i] - target[i]).powi(2);
                n += 1;
            }
        }
        let want = acc / (n.max(1) as f64);
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn multistep_gather_layout() {
        // x[t, p*h+j] = 100t + 10p + j with P=2, h=3
        let x = Tensor::<f64>::from_fn(&[6, 6], |i| {
            let (t, col) = (i / 6, i % 6);
            (100 * t + 10 * (col / 3) + col % 3) as f64
        });
        let y = multistep_gather_fwd(&x, 2, 3, 3, 4);
        assert_eq!(y.shape(), &[4, 2, 9]);
        for t in 0..4 {
            for p in 0..2 {
                for s in 0..3 {
                    for j in 0..3 {
                        assert_eq!(
                            y.at(&[t, p, s * 3 + j]),
                            (100 * (t + s) + 10 * p + j) as f64
                        );
                    }
                }
            }
        }
    }
}
