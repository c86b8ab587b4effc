//! Spatial resampling: separable resize, nearest upsampling and
//! offset-driven bilinear warping.

use std::sync::Arc;

use crate::graph::Var;
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

/// Row-stochastic `dst x src` matrix averaging the source cells covered by
/// each destination cell (adaptive average pooling bins).
pub fn area_matrix<S: Scalar>(src: usize, dst: usize) -> Vec<S> {
    assert!(src >= 1 && dst >= 1, "resize extents must be positive");
    let mut m = vec![S::zero(); dst * src];
    for i in 0..dst {
        let start = (i * src) / dst;
        let end = ((i + 1) * src).div_ceil(dst).max(start + 1);
        let wgt = S::one() / S::from_usize_lossy(end - start);
        for j in start..end {
            m[i * src + j] = wgt;
        }
    }
    m
}

/// Row-stochastic `dst x src` bilinear interpolation matrix using pixel-center
/// alignment (`src_pos = (i + 0.5) * src / dst - 0.5`), clamped at the borders.
pub fn bilinear_matrix<S: Scalar>(src: usize, dst: usize) -> Vec<S> {
    assert!(src >= 1 && dst >= 1, "resize extents must be positive");
    let mut m = vec![S::zero(); dst * src];
    let ratio = src as f64 / dst as f64;
    for i in 0..dst {
        let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        let frac = pos - lo as f64;
        m[i * src + lo] += S::of(1.0 - frac);
        m[i * src + hi] += S::of(frac);
    }
    m
}

fn apply_separable<S: Scalar>(
    x: &Tensor<S>,
    rows: &[S],
    cols: &[S],
    out_h: usize,
    out_w: usize,
) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let mut tmp = vec![S::zero(); out_h * w];
    for (plane, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(out_h * out_w)) {
        // rows (out_h x h) * plane (h x w) -> tmp (out_h x w)
        matmul(out_h, h, w, rows, false, plane, false, &mut tmp, false);
        // tmp (out_h x w) * cols^T (w x out_w) -> dst
        matmul(out_h, w, out_w, &tmp, false, cols, true, dst, false);
    }
    let _ = (n, c);
    out
}

fn apply_separable_transpose<S: Scalar>(
    g: &Tensor<S>,
    rows: &[S],
    cols: &[S],
    in_h: usize,
    in_w: usize,
) -> Tensor<S> {
    let (n, c, oh, ow) = g.dims4();
    let mut out = Tensor::zeros(&[n, c, in_h, in_w]);
    let mut tmp = vec![S::zero(); in_h * ow];
    for (plane, dst) in g.data().chunks(oh * ow).zip(out.data_mut().chunks_mut(in_h * in_w)) {
        // rows^T (in_h x oh) * plane (oh x ow) -> tmp (in_h x ow)
        matmul(in_h, oh, ow, rows, true, plane, false, &mut tmp, false);
        // tmp (in_h x ow) * cols (ow x in_w) -> dst
        matmul(in_h, ow, in_w, &tmp, false, cols, false, dst, false);
    }
    out
}

/// How a resize computes destination cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Box average over covered source cells.
    Area,
    /// Bilinear interpolation with pixel-center alignment.
    Bilinear,
}

fn resize_matrix<S: Scalar>(mode: ResizeMode, src: usize, dst: usize) -> Vec<S> {
    match mode {
        ResizeMode::Area => area_matrix(src, dst),
        ResizeMode::Bilinear => bilinear_matrix(src, dst),
    }
}

/// Resizes the spatial extent of a plain rank-4 tensor.
pub fn resize<S: Scalar>(x: &Tensor<S>, out_h: usize, out_w: usize, mode: ResizeMode) -> Tensor<S> {
    let (_, _, h, w) = x.dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let rows = resize_matrix::<S>(mode, h, out_h);
    let cols = resize_matrix::<S>(mode, w, out_w);
    apply_separable(x, &rows, &cols, out_h, out_w)
}

/// Nearest-neighbour 2x upsampling on plain tensors.
pub fn upsample_nearest2x<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Bilinear sampling position with border clamping: returns the two corner
/// indices, the interpolation weight, and whether the coordinate is interior
/// (its derivative is zero once clamped).
#[inline]
fn clamp_coord<S: Scalar>(pos: S, extent: usize) -> (usize, usize, S, bool) {
    let max = S::from_usize_lossy(extent - 1);
    let interior = pos >= S::zero() && pos <= max;
    let p = pos.max(S::zero()).min(max);
    let lo = p.floor();
    let lo_i = lo.to_usize().unwrap_or(0).min(extent - 1);
    let hi_i = (lo_i + 1).min(extent - 1);
    (lo_i, hi_i, p - lo, interior)
}

/// Backward warp: `out(y, x) = bilinear(phi, y + dy, x + dx)` with border
/// clamped coordinates. `offsets` is `[N, 2, H, W]` holding `(dy, dx)`.
pub fn warp_forward<S: Scalar>(phi: &Tensor<S>, offsets: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = phi.dims4();
    assert_eq!(offsets.shape(), &[n, 2, h, w], "offset map must be [N, 2, H, W]");
    let plane = h * w;
    let mut out = Tensor::zeros(phi.shape());
    let (pd, od) = (phi.data(), offsets.data());
    let od_ = od;
    let outd = out.data_mut();
    for b in 0..n {
        let dy = &od_[(b * 2) * plane..(b * 2 + 1) * plane];
        let dx = &od_[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (y0, y1, wy, _) = clamp_coord(S::from_usize_lossy(y) + dy[i], h);
                let (x0, x1, wx, _) = clamp_coord(S::from_usize_lossy(x) + dx[i], w);
                let (w00, w01) = ((S::one() - wy) * (S::one() - wx), (S::one() - wy) * wx);
                let (w10, w11) = (wy * (S::one() - wx), wy * wx);
                for ch in 0..c {
                    let src = &pd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    outd[(b * c + ch) * plane + i] = w00 * src[y0 * w + x0]
                        + w01 * src[y0 * w + x1]
                        + w10 * src[y1 * w + x0]
                        + w11 * src[y1 * w + x1];
                }
            }
        }
    }
    out
}

fn warp_backward<S: Scalar>(
    phi: &Tensor<S>,
    offsets: &Tensor<S>,
    g: &Tensor<S>,
    need_phi: bool,
    need_off: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>) {
    let (n, c, h, w) = phi.dims4();
    let plane = h * w;
    let mut dphi = need_phi.then(|| Tensor::zeros(phi.shape()));
    let mut doff = need_off.then(|| Tensor::zeros(offsets.shape()));
    let (pd, od, gd) = (phi.data(), offsets.data(), g.data());
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let dyv = od[(b * 2) * plane + i];
                let dxv = od[(b * 2 + 1) * plane + i];
                let (y0, y1, wy, iy) = clamp_coord(S::from_usize_lossy(y) + dyv, h);
                let (x0, x1, wx, ix) = clamp_coord(S::from_usize_lossy(x) + dxv, w);
                let (w00, w01) = ((S::one() - wy) * (S::one() - wx), (S::one() - wy) * wx);
                let (w10, w11) = (wy * (S::one() - wx), wy * wx);
                let mut gdy = S::zero();
                let mut gdx = S::zero();
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    let go = gd[base + i];
                    if let Some(dp) = dphi.as_mut() {
                        let dp = dp.data_mut();
                        dp[base + y0 * w + x0] += w00 * go;
                        dp[base + y0 * w + x1] += w01 * go;
                        dp[base + y1 * w + x0] += w10 * go;
                        dp[base + y1 * w + x1] += w11 * go;
                    }
                    if need_off {
                        let p00 = pd[base + y0 * w + x0];
                        let p01 = pd[base + y0 * w + x1];
                        let p10 = pd[base + y1 * w + x0];
                        let p11 = pd[base + y1 * w + x1];
                        if iy {
                            gdy += go * ((S::one() - wx) * (p10 - p00) + wx * (p11 - p01));
                        }
                        if ix {
                            gdx += go * ((S::one() - wy) * (p01 - p00) + wy * (p11 - p10));
                        }
                    }
                }
                if let Some(d) = doff.as_mut() {
                    d.data_mut()[(b * 2) * plane + i] = gdy;
                    d.data_mut()[(b * 2 + 1) * plane + i] = gdx;
                }
            }
        }
    }
    (dphi, doff)
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Spatial resize; a linear map, so gradients flow back through the
    /// transposed resampling matrices.
    pub fn resize(self, out_h: usize, out_w: usize, mode: ResizeMode) -> Var<'g, S> {
        let x = self.value();
        let (_, _, h, w) = x.dims4();
        if (h, w) == (out_h, out_w) {
            return self;
        }
        let rows = resize_matrix::<S>(mode, h, out_h);
        let cols = resize_matrix::<S>(mode, w, out_w);
        let y = apply_separable(&x, &rows, &cols, out_h, out_w);
        self.graph.push(y, &[self.id], move |g, _| {
            vec![Some(apply_separable_transpose(g, &rows, &cols, h, w))]
        })
    }

    pub fn upsample_nearest2x(self) -> Var<'g, S> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let y = upsample_nearest2x(&x);
        self.graph.push(y, &[self.id], move |g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for (src, dst) in g.data().chunks(4 * h * w).zip(dx.data_mut().chunks_mut(h * w)) {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Offset-driven backward warp of `self` (`[N, C, H, W]`) by `offsets`
    /// (`[N, 2, H, W]`, `(dy, dx)` in pixels), differentiable in both.
    pub fn warp(self, offsets: Var<'g, S>) -> Var<'g, S> {
        let phi = self.value();
        let off = offsets.value();
        let y = warp_forward(&phi, &off);
        let (phi, off) = (Arc::clone(&phi), Arc::clone(&off));
        self.graph.push(y, &[self.id, offsets.id], move |g, need| {
            let (dphi, doff) = warp_backward(&phi, &off, g, need[0], need[1]);
            vec![dphi, doff]
        })
    }

    /// Gathers rows of a `[K, D]` table into a `[N, D, H, W]` map, one row per
    /// spatial position (`indices` is `N*H*W` long, row-major over `(n, y, x)`).
    pub fn gather_rows(self, indices: &[usize], n: usize, h: usize, w: usize) -> Var<'g, S> {
        let table = self.value();
        assert_eq!(table.shape().len(), 2, "gather_rows expects a [K, D] table");
        let (k, d) = (table.shape()[0], table.shape()[1]);
        assert_eq!(indices.len(), n * h * w, "one index per position");
        let plane = h * w;
        let mut y = Tensor::zeros(&[n, d, h, w]);
        {
            let yd = y.data_mut();
            for (pos, &idx) in indices.iter().enumerate() {
                assert!(idx < k, "gather index {idx} out of range {k}");
                let (b, i) = (pos / plane, pos % plane);
                for j in 0..d {
                    yd[(b * d + j) * plane + i] = table.data()[idx * d + j];
                }
            }
        }
        let indices = indices.to_vec();
        self.graph.push(y, &[self.id], move |g, _| {
            let mut dt = Tensor::zeros(&[k, d]);
            let dd = dt.data_mut();
            for (pos, &idx) in indices.iter().enumerate() {
                let (b, i) = (pos / plane, pos % plane);
                for j in 0..d {
                    dd[idx * d + j] += g.data()[(b * d + j) * plane + i];
                }
            }
            vec![Some(dt)]
        })
    }
}
