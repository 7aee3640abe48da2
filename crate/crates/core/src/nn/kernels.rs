//! Raw slice kernels behind the tape ops. Layouts are NCHW, row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`; either
/// operand may be stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

/// Static description of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub pad_mode: PadMode,
}

impl ConvGeom {
    #[inline]
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    #[inline]
    pub fn out_hw(&self) -> (usize, usize) {
        let p = self.pad();
        (
            (self.h + 2 * p - self.k) / self.stride + 1,
            (self.w + 2 * p - self.k) / self.stride + 1,
        )
    }

    fn depthwise(&self) -> bool {
        // a single-channel dense conv is also depthwise; only padding decides
        self.groups == self.cin && self.cin == self.cout && (self.groups > 1 || self.pad_mode == PadMode::Replicate)
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.groups == 1
    }
}

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = g.pad() as isize;
    let k = g.k;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - p;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = g.pad() as isize;
    let k = g.k;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &s) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn source_index(o: usize, kk: usize, stride: usize, pad: isize, len: usize, mode: PadMode) -> Option<usize> {
    let i = (o * stride + kk) as isize - pad;
    if i >= 0 && i < len as isize {
        Some(i as usize)
    } else if mode == PadMode::Replicate {
        Some(i.clamp(0, len as isize - 1) as usize)
    } else {
        None
    }
}

/// Forward convolution. `w` has shape `(cout, cin / groups, k, k)`.
pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let plane_out = ho * wo;
    let mut out = vec![0.0; g.batch * g.cout * plane_out];
    if g.depthwise() {
        assert_eq!(g.groups, g.cin);
        assert_eq!(g.cin, g.cout);
        let k = g.k;
        let p = g.pad() as isize;
        for b in 0..g.batch {
            for c in 0..g.cin {
                let xin = &x[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
                let wk = &w[c * k * k..(c + 1) * k * k];
                let dst = &mut out[(b * g.cout + c) * plane_out..][..plane_out];
                for oy in 0..ho {
                    for ky in 0..k {
                        let Some(iy) = source_index(oy, ky, g.stride, p, g.h, g.pad_mode) else {
                            continue;
                        };
                        let src = &xin[iy * g.w..(iy + 1) * g.w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for kx in 0..k {
                            let wv = wk[ky * k + kx];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                if let Some(ix) = source_index(ox, kx, g.stride, p, g.w, g.pad_mode) {
                                    *d += wv * src[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        assert_eq!(g.pad_mode, PadMode::Zero, "replicate padding is depthwise-only");
        let kdim = g.cin * g.k * g.k;
        let mut col = if g.pointwise() { Vec::new() } else { vec![0.0; kdim * plane_out] };
        for b in 0..g.batch {
            let xin = &x[b * g.cin * g.h * g.w..][..g.cin * g.h * g.w];
            let dst = &mut out[b * g.cout * plane_out..][..g.cout * plane_out];
            if g.pointwise() {
                gemm(g.cout, kdim, plane_out, w, false, xin, false, dst, 0.0);
            } else {
                im2col(g, xin, &mut col);
                gemm(g.cout, kdim, plane_out, w, false, &col, false, dst, 0.0);
            }
        }
    }
    if let Some(bias) = bias {
        for b in 0..g.batch {
            for c in 0..g.cout {
                let bv = bias[c];
                out[(b * g.cout + c) * plane_out..][..plane_out]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of a convolution. Any of the outputs may be skipped.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let (ho, wo) = g.out_hw();
    let plane_out = ho * wo;
    if let Some(db) = dbias {
        for b in 0..g.batch {
            for c in 0..g.cout {
                db[c] += dout[(b * g.cout + c) * plane_out..][..plane_out].iter().sum::<f64>();
            }
        }
    }
    if g.depthwise() {
        let k = g.k;
        let p = g.pad() as isize;
        let mut dx = dx;
        let mut dw = dw;
        for b in 0..g.batch {
            for c in 0..g.cin {
                let base_in = (b * g.cin + c) * g.h * g.w;
                let xin = &x[base_in..base_in + g.h * g.w];
                let wk = &w[c * k * k..(c + 1) * k * k];
                let d = &dout[(b * g.cout + c) * plane_out..][..plane_out];
                for oy in 0..ho {
                    for ky in 0..k {
                        let Some(iy) = source_index(oy, ky, g.stride, p, g.h, g.pad_mode) else {
                            continue;
                        };
                        let drow = &d[oy * wo..(oy + 1) * wo];
                        for kx in 0..k {
                            let widx = c * k * k + ky * k + kx;
                            let mut acc_w = 0.0;
                            for (ox, &gv) in drow.iter().enumerate() {
                                if let Some(ix) = source_index(ox, kx, g.stride, p, g.w, g.pad_mode) {
                                    acc_w += gv * xin[iy * g.w + ix];
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[base_in + iy * g.w + ix] += gv * wk[ky * k + kx];
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[widx] += acc_w;
                            }
                        }
                    }
                }
            }
        }
        return;
    }
    let kdim = g.cin * g.k * g.k;
    let mut col = if g.pointwise() { Vec::new() } else { vec![0.0; kdim * plane_out] };
    let mut dcol = if g.pointwise() || dx.is_none() {
        Vec::new()
    } else {
        vec![0.0; kdim * plane_out]
    };
    let mut dx = dx;
    let mut dw = dw;
    for b in 0..g.batch {
        let xin = &x[b * g.cin * g.h * g.w..][..g.cin * g.h * g.w];
        let d = &dout[b * g.cout * plane_out..][..g.cout * plane_out];
        if let Some(dw) = dw.as_deref_mut() {
            if g.pointwise() {
                gemm(g.cout, plane_out, kdim, d, false, xin, true, dw, 1.0);
            } else {
                im2col(g, xin, &mut col);
                gemm(g.cout, plane_out, kdim, d, false, &col, true, dw, 1.0);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * g.cin * g.h * g.w..][..g.cin * g.h * g.w];
            if g.pointwise() {
                gemm(kdim, g.cout, plane_out, w, true, d, false, dxb, 1.0);
            } else {
                gemm(kdim, g.cout, plane_out, w, true, d, false, &mut dcol, 0.0);
                col2im(g, &dcol, dxb);
            }
        }
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;

/// Per-channel mean and biased variance over batch and space.
pub(crate) fn channel_moments(x: &[f64], batch: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..batch {
            s += x[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for b in 0..batch {
            v += x[(b * c + ch) * plane..][..plane]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}

pub(crate) fn inv_std(var: &[f64]) -> Vec<f64> {
    var.iter().map(|&v| 1.0 / math::sqrt(v + BN_EPS)).collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_forward(
    x: &[f64],
    batch: usize,
    c: usize,
    plane: usize,
    mean: &[f64],
    invstd: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (mu, is, ga, be) = (mean[ch], invstd[ch], gamma[ch], beta[ch]);
            for (o, &v) in out[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = ga * (v - mu) * is + be;
            }
        }
    }
    out
}

/// Gradients through batch normalization. With `batch_stats` the mean and
/// variance are treated as functions of `x`; otherwise they are constants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    x: &[f64],
    dout: &[f64],
    batch: usize,
    c: usize,
    plane: usize,
    mean: &[f64],
    invstd: &[f64],
    gamma: &[f64],
    batch_stats: bool,
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let m = (batch * plane) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for b in 0..batch {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (mu, is) = (mean[ch], invstd[ch]);
            let mut s = 0.0;
            let mut sx = 0.0;
            for (&d, &v) in dout[off..off + plane].iter().zip(&x[off..off + plane]) {
                s += d;
                sx += d * (v - mu) * is;
            }
            sum_dy[ch] += s;
            sum_dy_xhat[ch] += sx;
        }
    }
    if let Some(dg) = dgamma {
        for ch in 0..c {
            dg[ch] += sum_dy_xhat[ch];
        }
    }
    if let Some(db) = dbeta {
        for ch in 0..c {
            db[ch] += sum_dy[ch];
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (mu, is, ga) = (mean[ch], invstd[ch], gamma[ch]);
                if batch_stats {
                    let k = ga * is / m;
                    let (sd, sdx) = (sum_dy[ch], sum_dy_xhat[ch]);
                    for i in off..off + plane {
                        let xhat = (x[i] - mu) * is;
                        dx[i] += k * (m * dout[i] - sd - xhat * sdx);
                    }
                } else {
                    for i in off..off + plane {
                        dx[i] += ga * is * dout[i];
                    }
                }
            }
        }
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_B: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_A * (x + GELU_B * x * x * x)))
}

/// GELU value and slope sharing one `tanh`.
#[inline]
pub(crate) fn gelu_with_grad(x: f64) -> (f64, f64) {
    let t = math::tanh(GELU_A * (x + GELU_B * x * x * x));
    let y = 0.5 * x * (1.0 + t);
    (y, 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x))
}

/// Source taps for half-pixel-aligned bilinear upsampling along one axis.
pub(crate) fn upsample_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (math::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = upsample_taps(h, oh);
    let tx = upsample_taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn upsample_backward(dout: &[f64], dx: &mut [f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) {
    let ty = upsample_taps(h, oh);
    let tx = upsample_taps(w, ow);
    for p in 0..planes {
        let d = &dout[p * oh * ow..(p + 1) * oh * ow];
        let g = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = d[oy * ow + ox];
                g[y0 * w + x0] += v * (1.0 - fx) * (1.0 - fy);
                g[y0 * w + x1] += v * fx * (1.0 - fy);
                g[y1 * w + x0] += v * (1.0 - fx) * fy;
                g[y1 * w + x1] += v * fx * fy;
            }
        }
    }
}

/// ReLU linear attention for one head, `q`, `k`, `v` are `n x d` row-major.
pub(crate) fn linear_attention_head(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize, eps: f64) -> Vec<f64> {
    let (kv, ksum) = kv_summary(k, v, n, d);
    let mut out = vec![0.0; n * d];
    let mut phi = vec![0.0; d];
    for i in 0..n {
        for (p, &x) in phi.iter_mut().zip(&q[i * d..(i + 1) * d]) {
            *p = x.max(0.0);
        }
        let den: f64 = phi.iter().zip(&ksum).map(|(a, b)| a * b).sum::<f64>() + eps;
        let row = &mut out[i * d..(i + 1) * d];
        for (a, &pa) in phi.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (r, &kvv) in row.iter_mut().zip(&kv[a * d..(a + 1) * d]) {
                *r += pa * kvv;
            }
        }
        row.iter_mut().for_each(|r| *r /= den);
    }
    out
}

/// `relu(K)^T V` (`d x d`) and the column sums of `relu(K)`.
fn kv_summary(k: &[f64], v: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut kv = vec![0.0; d * d];
    let mut ksum = vec![0.0; d];
    for j in 0..n {
        let kr = &k[j * d..(j + 1) * d];
        let vr = &v[j * d..(j + 1) * d];
        for (a, &ka) in kr.iter().enumerate() {
            let pa = ka.max(0.0);
            if pa == 0.0 {
                continue;
            }
            ksum[a] += pa;
            for (slot, &vb) in kv[a * d..(a + 1) * d].iter_mut().zip(vr) {
                *slot += pa * vb;
            }
        }
    }
    (kv, ksum)
}

/// Backward of [`linear_attention_head`]; gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_attention_head_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    n: usize,
    d: usize,
    eps: f64,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let (kv, ksum) = kv_summary(k, v, n, d);
    let mut dkv = vec![0.0; d * d];
    let mut dksum = vec![0.0; d];
    let mut phi = vec![0.0; d];
    let mut num = vec![0.0; d];
    let mut dnum = vec![0.0; d];
    for i in 0..n {
        for (p, &x) in phi.iter_mut().zip(&q[i * d..(i + 1) * d]) {
            *p = x.max(0.0);
        }
        let den: f64 = phi.iter().zip(&ksum).map(|(a, b)| a * b).sum::<f64>() + eps;
        num.iter_mut().for_each(|x| *x = 0.0);
        for (a, &pa) in phi.iter().enumerate() {
            for (nc, &kvv) in num.iter_mut().zip(&kv[a * d..(a + 1) * d]) {
                *nc += pa * kvv;
            }
        }
        let gi = &g[i * d..(i + 1) * d];
        // out = num / den
        let mut g_dot_out = 0.0;
        for c in 0..d {
            dnum[c] = gi[c] / den;
            g_dot_out += gi[c] * num[c] / den;
        }
        let dden = -g_dot_out / den;
        for a in 0..d {
            let qa = q[i * d + a];
            let mut dphi = dden * ksum[a];
            for c in 0..d {
                dphi += kv[a * d + c] * dnum[c];
            }
            if qa > 0.0 {
                dq[i * d + a] += dphi;
            }
            let pa = phi[a];
            if pa != 0.0 {
                for c in 0..d {
                    dkv[a * d + c] += pa * dnum[c];
                }
                dksum[a] += dden * pa;
            }
        }
    }
    for j in 0..n {
        for a in 0..d {
            let ka = k[j * d + a];
            let pa = ka.max(0.0);
            let mut dphi = dksum[a];
            for c in 0..d {
                dphi += dkv[a * d + c] * v[j * d + c];
                dv[j * d + c] += pa * dkv[a * d + c];
            }
            if ka > 0.0 {
                dk[j * d + a] += dphi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1, 2], [3, 4]], b = [[5, 6], [7, 8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let p = g.pad() as isize;
        let cin_g = g.cin / g.groups;
        let cout_g = g.cout / g.groups;
        let mut out = vec![0.0; g.batch * g.cout * ho * wo];
        for b in 0..g.batch {
            for co in 0..g.cout {
                let grp = co / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..cin_g {
                            let c = grp * cin_g + ci;
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let mut iy = (oy * g.stride + ky) as isize - p;
                                    let mut ix = (ox * g.stride + kx) as isize - p;
                                    if g.pad_mode == PadMode::Replicate {
                                        iy = iy.clamp(0, g.h as isize - 1);
                                        ix = ix.clamp(0, g.w as isize - 1);
                                    }
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    s += w[((co * cin_g + ci) * g.k + ky) * g.k + kx]
                                        * x[((b * g.cin + c) * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        out[((b * g.cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive() {
        let cases = [
            ConvGeom { batch: 2, cin: 3, cout: 4, h: 7, w: 6, k: 3, stride: 2, groups: 1, pad_mode: PadMode::Zero },
            ConvGeom { batch: 1, cin: 5, cout: 2, h: 4, w: 4, k: 1, stride: 1, groups: 1, pad_mode: PadMode::Zero },
            ConvGeom { batch: 2, cin: 4, cout: 4, h: 5, w: 8, k: 3, stride: 2, groups: 4, pad_mode: PadMode::Zero },
            ConvGeom { batch: 1, cin: 3, cout: 3, h: 6, w: 6, k: 5, stride: 1, groups: 3, pad_mode: PadMode::Replicate },
        ];
        for (i, g) in cases.iter().enumerate() {
            let x = pseudo(g.batch * g.cin * g.h * g.w, i as u64);
            let w = pseudo(g.cout * g.cin / g.groups * g.k * g.k, 100 + i as u64);
            let fast = conv2d_forward(g, &x, &w, None);
            let slow = naive_conv(g, &x, &w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "case {i}");
            }
        }
    }

    #[test]
    fn upsample_taps_identity_when_same_size() {
        for (o, &(i0, _, f)) in upsample_taps(5, 5).iter().enumerate() {
            assert_eq!(i0, o);
            assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            let (y, slope) = gelu_with_grad(x);
            assert_eq!(y, gelu(x));
            assert!((fd - slope).abs() < 1e-8);
        }
    }
}
