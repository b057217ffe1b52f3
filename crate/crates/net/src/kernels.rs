//! Forward and backward kernels over raw NCHW buffers.
//!
//! Convolution lowers to GEMM through im2col; the column buffer is rebuilt
//! in the backward pass instead of being kept alive for the whole graph.

use crate::float::{matmul, Float};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// "Same" padding for odd kernels at stride 1.
    pub fn same(k: usize, dilation: usize) -> Self {
        Self {
            k,
            stride: 1,
            dilation,
            pad: dilation * (k - 1) / 2,
        }
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        let span = self.dilation * (self.k - 1) + 1;
        (len + 2 * self.pad).checked_sub(span).map(|v| v / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<F: Float>(x: &[F], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, cols: &mut [F]) {
    let (k, s, d, p) = (g.k, g.stride as isize, g.dilation as isize, g.pad as isize);
    let plane = ho * wo;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                let dst = &mut cols[row..row + plane];
                let off_x = kx as isize * d - p;
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ky as isize * d;
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(F::ZERO);
                        continue;
                    }
                    let line = &src[iy as usize * w..(iy as usize + 1) * w];
                    if s == 1 {
                        // valid ox range: 0 <= ox + off_x < w
                        let lo = (-off_x).clamp(0, wo as isize) as usize;
                        let hi = (w as isize - off_x).clamp(0, wo as isize) as usize;
                        out[..lo].fill(F::ZERO);
                        if hi > lo {
                            let a = (lo as isize + off_x) as usize;
                            out[lo..hi].copy_from_slice(&line[a..a + hi - lo]);
                        }
                        out[hi.max(lo)..].fill(F::ZERO);
                    } else {
                        for (ox, v) in out.iter_mut().enumerate() {
                            let ix = ox as isize * s + off_x;
                            *v = if ix >= 0 && ix < w as isize { line[ix as usize] } else { F::ZERO };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<F: Float>(cols: &[F], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, dx: &mut [F]) {
    let (k, s, d, p) = (g.k, g.stride as isize, g.dilation as isize, g.pad as isize);
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * plane;
                let src = &cols[row..row + plane];
                let off_x = kx as isize * d - p;
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ky as isize * d;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = ox as isize * s + off_x;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` [N,C,H,W] with `w` [O,C,k,k] plus optional bias.
pub fn conv_forward<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>, g: ConvGeom) -> Tensor<F> {
    let [n, c, h, wd] = x.shape();
    let o = w.shape()[0];
    let (ho, wo) = (g.out_len(h).expect("checked"), g.out_len(wd).expect("checked"));
    let (ckk, plane) = (c * g.k * g.k, ho * wo);
    let mut out = Tensor::zeros([n, o, ho, wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::ZERO; ckk * plane] };
    for i in 0..n {
        let src: &[F] = if g.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), c, h, wd, g, ho, wo, &mut cols);
            &cols
        };
        let dst = out.item_mut(i);
        if let Some(b) = b {
            for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        matmul(o, ckk, plane, w.data(), false, src, false, dst, b.is_some());
    }
    out
}

/// Gradients of [`conv_forward`]: `(dx, dw, db)`; `dx` only when asked.
pub fn conv_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    g: ConvGeom,
    dy: &Tensor<F>,
    want_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let [n, c, h, wd] = x.shape();
    let [_, o, ho, wo] = dy.shape();
    let (ckk, plane) = (c * g.k * g.k, ho * wo);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([o, 1, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::ZERO; ckk * plane] };
    let mut dcols = vec![F::ZERO; if want_dx && !g.is_pointwise() { ckk * plane } else { 0 }];
    for i in 0..n {
        let dyi = dy.item(i);
        for (oc, chunk) in dyi.chunks(plane).enumerate() {
            db.data_mut()[oc] += chunk.iter().copied().sum::<F>();
        }
        let src: &[F] = if g.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), c, h, wd, g, ho, wo, &mut cols);
            &cols
        };
        // dW[O, CKK] += dY[O, P] · cols^T
        matmul(o, plane, ckk, dyi, false, src, true, dw.data_mut(), true);
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                matmul(ckk, o, plane, w.data(), true, dyi, false, dx.item_mut(i), true);
            } else {
                matmul(ckk, o, plane, w.data(), true, dyi, false, &mut dcols, false);
                col2im(&dcols, c, h, wd, g, ho, wo, dx.item_mut(i));
            }
        }
    }
    (dx, dw, db)
}

/// 2×2 stride-2 transposed convolution: `x` [N,Ci,H,W], `w` [Ci,Co,2,2].
pub fn up2_forward<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Tensor<F> {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[1];
    let plane = h * wd;
    let mut out = Tensor::zeros([n, co, 2 * h, 2 * wd]);
    let mut tmp = vec![F::ZERO; co * 4 * plane];
    for i in 0..n {
        // tmp[Co*4, P] = W^T · x
        matmul(co * 4, ci, plane, w.data(), true, x.item(i), false, &mut tmp, false);
        let dst = out.item_mut(i);
        for o in 0..co {
            let bias = b.map_or(F::ZERO, |b| b.data()[o]);
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &tmp[(o * 4 + a * 2 + bb) * plane..][..plane];
                    for y in 0..h {
                        for xx in 0..wd {
                            dst[(o * 2 * h + 2 * y + a) * 2 * wd + 2 * xx + bb] = row[y * wd + xx] + bias;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn up2_backward<F: Float>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dy: &Tensor<F>,
    want_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[1];
    let plane = h * wd;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([co, 1, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dtmp = vec![F::ZERO; co * 4 * plane];
    for i in 0..n {
        let src = dy.item(i);
        for o in 0..co {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut dtmp[(o * 4 + a * 2 + bb) * plane..][..plane];
                    for y in 0..h {
                        for xx in 0..wd {
                            let v = src[(o * 2 * h + 2 * y + a) * 2 * wd + 2 * xx + bb];
                            row[y * wd + xx] = v;
                            db.data_mut()[o] += v;
                        }
                    }
                }
            }
        }
        // dW[Ci, Co*4] += x[Ci, P] · dtmp^T
        matmul(ci, plane, co * 4, x.item(i), false, &dtmp, true, dw.data_mut(), true);
        if let Some(dx) = dx.as_mut() {
            matmul(ci, co * 4, plane, w.data(), false, &dtmp, false, dx.item_mut(i), false);
        }
    }
    (dx, dw, db)
}

/// 2×2 max pooling; also returns the winning input offset per output.
pub fn maxpool2_forward<F: Float>(x: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let src = x.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * w + 2 * xx + dx;
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                let o = (nc * ho + y) * wo + xx;
                dst[o] = src[best];
                arg[o] = (best - base) as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Float>(x_shape: [usize; 4], arg: &[u32], dy: &Tensor<F>) -> Tensor<F> {
    let [_, _, h, w] = x_shape;
    let [_, _, ho, wo] = dy.shape();
    let mut dx = Tensor::zeros(x_shape);
    let d = dx.data_mut();
    for (o, (&g, &a)) in dy.data().iter().zip(arg).enumerate() {
        let nc = o / (ho * wo);
        d[nc * h * w + a as usize] += g;
    }
    dx
}

/// Per-channel statistics over N·H·W.
pub fn channel_stats<F: Float>(x: &Tensor<F>) -> (Vec<F>, Vec<F>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let m = F::from_f64((n * plane) as f64);
    let mut mean = vec![F::ZERO; c];
    let mut var = vec![F::ZERO; c];
    for i in 0..n {
        for (ch, chunk) in x.item(i).chunks(plane).enumerate() {
            mean[ch] += chunk.iter().copied().sum::<F>();
        }
    }
    for v in mean.iter_mut() {
        *v = *v / m;
    }
    for i in 0..n {
        for (ch, chunk) in x.item(i).chunks(plane).enumerate() {
            let mu = mean[ch];
            var[ch] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>();
        }
    }
    for v in var.iter_mut() {
        *v = *v / m;
    }
    (mean, var)
}

/// `y = gamma * (x - mean) * inv + beta`; returns `y` and the normalized
/// input `xhat`.
pub fn bn_apply<F: Float>(x: &Tensor<F>, mean: &[F], inv: &[F], gamma: &[F], beta: &[F]) -> (Tensor<F>, Tensor<F>) {
    let [n, _, h, w] = x.shape();
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    for i in 0..n {
        let src = x.item(i);
        let (yi, xi) = (y.item_mut(i), xhat.item_mut(i));
        for ch in 0..mean.len() {
            let r = ch * plane..(ch + 1) * plane;
            for j in r {
                let v = (src[j] - mean[ch]) * inv[ch];
                xi[j] = v;
                yi[j] = gamma[ch] * v + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Backward of batch normalization. With `batch_stats` the statistics are
/// treated as functions of the input (training mode), otherwise as
/// constants (evaluation mode).
pub fn bn_backward<F: Float>(
    xhat: &Tensor<F>,
    inv: &[F],
    gamma: &[F],
    dy: &Tensor<F>,
    batch_stats: bool,
) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let m = F::from_f64((n * plane) as f64);
    let mut dgamma = vec![F::ZERO; c];
    let mut dbeta = vec![F::ZERO; c];
    for i in 0..n {
        let (g, xh) = (dy.item(i), xhat.item(i));
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            dbeta[ch] += g[r.clone()].iter().copied().sum::<F>();
            dgamma[ch] += g[r.clone()].iter().zip(&xh[r]).map(|(&a, &b)| a * b).sum::<F>();
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for i in 0..n {
        let (g, xh) = (dy.item(i), xhat.item(i));
        let d = dx.item_mut(i);
        for ch in 0..c {
            let k = gamma[ch] * inv[ch];
            for j in ch * plane..(ch + 1) * plane {
                d[j] = if batch_stats {
                    k * (g[j] - dbeta[ch] / m - xh[j] * dgamma[ch] / m)
                } else {
                    k * g[j]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
