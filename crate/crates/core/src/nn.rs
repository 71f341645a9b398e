//! Minimal convolutional building blocks with explicit backward passes.
//!
//! Parameters of a network live in one flat `Vec<f64>`; each layer knows
//! the offset of its weights and biases in that store. Gradients use a
//! buffer of the same length, which keeps optimizers and finite-difference
//! checks index-based.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::rng::Rng;
use crate::tensor::FeatureMap;

/// Square "same"-padded 2-D convolution.
///
/// Weights are stored `[kh][kw][in][out]` so the innermost loops run over
/// contiguous output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub offset: usize,
}

impl Conv2d {
    #[inline]
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_ch * self.out_ch
    }

    #[inline]
    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    #[inline]
    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1);
        let p = 2 * self.pad() as usize;
        ((h + p - span - 1) / self.stride + 1, (w + p - span - 1) / self.stride + 1)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w = &params[self.offset..self.offset + self.weight_len()];
        let b = &params[self.offset + self.weight_len()..self.offset + self.param_len()];
        (w, b)
    }

    /// He-normal weights, zero biases.
    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let fan_in = (self.kernel * self.kernel * self.in_ch) as f64;
        let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in)).expect("finite std");
        let (w, b) = params[self.offset..self.offset + self.param_len()].split_at_mut(self.weight_len());
        w.iter_mut().for_each(|v| *v = normal.sample(rng));
        b.fill(0.0);
    }

    /// Input pixel feeding kernel tap (`ki`, `kj`) of output pixel (`oi`, `oj`).
    #[inline]
    fn tap(&self, oi: usize, oj: usize, ki: usize, kj: usize, h: usize, w: usize) -> Option<usize> {
        let ii = (oi * self.stride) as isize + (ki * self.dilation) as isize - self.pad();
        let jj = (oj * self.stride) as isize + (kj * self.dilation) as isize - self.pad();
        if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
            None
        } else {
            Some(ii as usize * w + jj as usize)
        }
    }

    pub fn forward(&self, params: &[f64], x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels(), self.in_ch);
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.out_size(h, w);
        let (weights, bias) = self.weights(params);
        let mut out = FeatureMap::zeros(oh, ow, self.out_ch);
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        for oi in 0..oh {
            for oj in 0..ow {
                let acc = out.pixel_mut(oi * ow + oj);
                acc.copy_from_slice(bias);
                for ki in 0..k {
                    for kj in 0..k {
                        let Some(src) = self.tap(oi, oj, ki, kj, h, w) else {
                            continue;
                        };
                        let xs = x.pixel(src);
                        let base = (ki * k + kj) * cin * cout;
                        for (ci, &xv) in xs.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let row = &weights[base + ci * cout..base + (ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (same indexing as
    /// `params`) when given, and returns the input gradient when
    /// `want_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        x: &FeatureMap,
        grad_out: &FeatureMap,
        mut grads: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (grad_out.height(), grad_out.width());
        let (weights, _) = self.weights(params);
        let (k, cin, cout) = (self.kernel, self.in_ch, self.out_ch);
        let mut grad_in = want_input.then(|| FeatureMap::zeros(h, w, cin));

        if let Some(g) = grads.as_deref_mut() {
            let gb = &mut g[self.offset + self.weight_len()..self.offset + self.param_len()];
            for p in 0..oh * ow {
                for (b, &go) in gb.iter_mut().zip(grad_out.pixel(p)) {
                    *b += go;
                }
            }
        }

        for oi in 0..oh {
            for oj in 0..ow {
                let go = grad_out.pixel(oi * ow + oj);
                if go.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ki in 0..k {
                    for kj in 0..k {
                        let Some(src) = self.tap(oi, oj, ki, kj, h, w) else {
                            continue;
                        };
                        let base = (ki * k + kj) * cin * cout;
                        if let Some(g) = grads.as_deref_mut() {
                            let gw = &mut g[self.offset..self.offset + self.weight_len()];
                            for (ci, &xv) in x.pixel(src).iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let row = &mut gw[base + ci * cout..base + (ci + 1) * cout];
                                for (r, &gv) in row.iter_mut().zip(go) {
                                    *r += xv * gv;
                                }
                            }
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let gpix = gi.pixel_mut(src);
                            for (ci, gx) in gpix.iter_mut().enumerate() {
                                let row = &weights[base + ci * cout..base + (ci + 1) * cout];
                                let mut s = 0.0;
                                for (&wv, &gv) in row.iter().zip(go) {
                                    s += wv * gv;
                                }
                                *gx += s;
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    x.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &FeatureMap, grad: &FeatureMap) -> FeatureMap {
    let mut g = grad.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(x: &FeatureMap) -> FeatureMap {
    let (h, w, c) = x.shape();
    let mut out = FeatureMap::zeros(2 * h, 2 * w, c);
    for i in 0..2 * h {
        for j in 0..2 * w {
            out.pixel_mut(i * 2 * w + j).copy_from_slice(x.pixel((i / 2) * w + j / 2));
        }
    }
    out
}

pub fn upsample2_backward(grad: &FeatureMap) -> FeatureMap {
    let (h2, w2, c) = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = FeatureMap::zeros(h, w, c);
    for i in 0..h2 {
        for j in 0..w2 {
            let dst = (i / 2) * w + j / 2;
            for ch in 0..c {
                out.pixel_mut(dst)[ch] += grad.pixel(i * w2 + j)[ch];
            }
        }
    }
    out
}

/// Channel concatenation of two maps with equal spatial size.
pub fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    debug_assert_eq!((a.height(), a.width()), (b.height(), b.width()));
    let (ca, cb) = (a.channels(), b.channels());
    let mut out = FeatureMap::zeros(a.height(), a.width(), ca + cb);
    for p in 0..a.pixels() {
        let px = out.pixel_mut(p);
        px[..ca].copy_from_slice(a.pixel(p));
        px[ca..].copy_from_slice(b.pixel(p));
    }
    out
}

/// Splits a concatenated gradient back into its two parts.
pub fn concat_backward(grad: &FeatureMap, ca: usize) -> (FeatureMap, FeatureMap) {
    let (h, w, c) = grad.shape();
    let mut a = FeatureMap::zeros(h, w, ca);
    let mut b = FeatureMap::zeros(h, w, c - ca);
    for p in 0..h * w {
        a.pixel_mut(p).copy_from_slice(&grad.pixel(p)[..ca]);
        b.pixel_mut(p).copy_from_slice(&grad.pixel(p)[ca..]);
    }
    (a, b)
}

/// Lays out consecutive conv layers in one parameter store.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn conv(&mut self, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, dilation: usize) -> Conv2d {
        let conv = Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            dilation,
            offset: self.next,
        };
        self.next += conv.param_len();
        conv
    }

    pub fn len(&self) -> usize {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.next == 0
    }
}

pub fn init_params(layers: &[Conv2d], len: usize, rng: &mut Rng) -> Vec<f64> {
    let mut params = vec![0.0; len];
    for layer in layers {
        layer.init(&mut params, rng);
    }
    params
}

/// Order-dependent FNV-1a digest of the bit patterns of `values`.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
