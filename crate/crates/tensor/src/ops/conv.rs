//! 2-D convolution via im2col and GEMM.

use std::sync::Arc;

use crate::graph::Var;
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1 && k >= 1, "invalid convolution geometry");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Self { c, h, w, k, stride, pad, oh, ow }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<S: Scalar>(x: &[S], g: &Geometry, cols: &mut [S]) {
    let (oh, ow) = (g.oh, g.ow);
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &x[(ch * g.h + iy as usize) * g.w..(ch * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { S::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(cols: &[S], g: &Geometry, dx: &mut [S]) {
    let (oh, ow) = (g.oh, g.ow);
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ch * g.h + iy as usize) * g.w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution on plain tensors. `weight` is `[Cout, Cin, k, k]`.
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let (cout, cin, k, k2) = weight.dims4();
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(cin, c, "conv2d input has {c} channels, weight expects {cin}");
    let g = Geometry::new(c, h, w, k, stride, pad);
    let (rows, ncols) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[n, cout, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![S::zero(); rows * ncols] };
    let item_in = c * h * w;
    let item_out = cout * ncols;
    for b in 0..n {
        let xin = &x.data()[b * item_in..(b + 1) * item_in];
        let colref: &[S] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, &g, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[b * item_out..(b + 1) * item_out];
        matmul(cout, rows, ncols, weight.data(), false, colref, false, dst, false);
        if let Some(bias) = bias {
            for (oc, chunk) in dst.chunks_mut(ncols).enumerate() {
                let bv = bias.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Returns `(dx, dweight, dbias)` for the requested parts.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    gy: &Tensor<S>,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>, Option<Tensor<S>>) {
    let (n, c, h, w) = x.dims4();
    let (cout, _, k, _) = weight.dims4();
    let g = Geometry::new(c, h, w, k, stride, pad);
    let (rows, ncols) = (g.rows(), g.cols());
    let item_in = c * h * w;
    let item_out = cout * ncols;
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut cols = vec![S::zero(); if g.is_pointwise() { 0 } else { rows * ncols }];
    let mut dcols = vec![S::zero(); if need_x && !g.is_pointwise() { rows * ncols } else { 0 }];
    for b in 0..n {
        let gout = &gy.data()[b * item_out..(b + 1) * item_out];
        if let Some(dw) = dw.as_mut() {
            let xin = &x.data()[b * item_in..(b + 1) * item_in];
            let colref: &[S] = if g.is_pointwise() {
                xin
            } else {
                im2col(xin, &g, &mut cols);
                &cols
            };
            matmul(cout, ncols, rows, gout, false, colref, true, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[b * item_in..(b + 1) * item_in];
            if g.is_pointwise() {
                matmul(rows, cout, ncols, weight.data(), true, gout, false, dst, true);
            } else {
                matmul(rows, cout, ncols, weight.data(), true, gout, false, &mut dcols, false);
                col2im(&dcols, &g, dst);
            }
        }
    }
    let db = need_b.then(|| {
        let mut db = Tensor::zeros(&[cout]);
        for b in 0..n {
            let gout = &gy.data()[b * item_out..(b + 1) * item_out];
            for (oc, chunk) in gout.chunks(ncols).enumerate() {
                db.data_mut()[oc] += chunk.iter().copied().sum();
            }
        }
        db
    });
    (dx, dw, db)
}

impl<'g, S: Scalar> Var<'g, S> {
    /// 2-D convolution with square kernel, zero padding and optional bias.
    pub fn conv2d(self, weight: Var<'g, S>, bias: Option<Var<'g, S>>, stride: usize, pad: usize) -> Var<'g, S> {
        let x = self.value();
        let wt = weight.value();
        let bv = bias.map(|b| b.value());
        let y = conv2d_forward(&x, &wt, bv.as_deref(), stride, pad);
        let mut ids = vec![self.id, weight.id];
        if let Some(b) = bias {
            ids.push(b.id);
        }
        let has_bias = bias.is_some();
        let (x, wt) = (Arc::clone(&x), Arc::clone(&wt));
        self.graph.push(y, &ids, move |g, need| {
            let (dx, dw, db) =
                conv2d_backward(&x, &wt, g, stride, pad, need[0], need[1], has_bias && need[2]);
            let mut out = vec![dx, dw];
            if has_bias {
                out.push(db);
            }
            out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at4(b, ci, iy as usize, ix as usize) * w.at4(o, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        *out.at4_mut(b, o, oy, ox) = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let x = Tensor::from_vec(&[2, 3, 5, 6], (0..180).map(|i| ((i * 7 % 13) as f64) / 13.0).collect()).unwrap();
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
            let w = Tensor::from_vec(&[4, 3, k, k], (0..4 * 3 * k * k).map(|i| ((i as f64) * 0.3).sin()).collect())
                .unwrap();
            let got = conv2d_forward(&x, &w, None, stride, pad);
            let want = naive(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }
}
