use vfi_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_RADIUS: usize = 8;

/// Exhaustive block matching on luma with a sum-of-absolute-differences cost.
///
/// Returns `[2, H, W]` with `(dy, dx)` such that `b(p + d) ~ a(p)`, constant
/// over each block. Edge blocks are truncated to the frame. Ties prefer the
/// smallest squared magnitude, then the lexicographically smallest `(dy, dx)`.
pub fn block_match<S: Scalar>(a: &Image<S>, b: &Image<S>, block: usize, radius: usize) -> Result<Tensor<S>> {
    if block == 0 {
        return Err(Error::Config("block size must be positive".into()));
    }
    let (h, w) = (a.height(), a.width());
    if (b.height(), b.width()) != (h, w) {
        return Err(Error::Shape(format!("flow frames differ: {h}x{w} vs {}x{}", b.height(), b.width())));
    }
    let la: Vec<f64> = a.luma().data().iter().map(|v| v.as_f64()).collect();
    let lb: Vec<f64> = b.luma().data().iter().map(|v| v.as_f64()).collect();
    let r = radius as isize;
    let mut out = Tensor::zeros(&[2, h, w]);
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (bh, bw) = (block.min(h - by), block.min(w - bx));
            let mut best: Option<(f64, isize, isize, isize)> = None;
            for dy in -r..=r {
                let y0 = by as isize + dy;
                if y0 < 0 || y0 as usize + bh > h {
                    continue;
                }
                for dx in -r..=r {
                    let x0 = bx as isize + dx;
                    if x0 < 0 || x0 as usize + bw > w {
                        continue;
                    }
                    let mut cost = 0.0;
                    for yy in 0..bh {
                        let ra = (by + yy) * w + bx;
                        let rb = (y0 as usize + yy) * w + x0 as usize;
                        cost += la[ra..ra + bw].iter().zip(&lb[rb..rb + bw]).map(|(p, q)| (p - q).abs()).sum::<f64>();
                    }
                    let cand = (cost, dy * dy + dx * dx, dy, dx);
                    if best.map_or(true, |b| better(cand, b)) {
                        best = Some(cand);
                    }
                }
            }
            let (_, _, dy, dx) = best.expect("zero displacement is always a candidate");
            let d = out.data_mut();
            for yy in by..by + bh {
                for xx in bx..bx + bw {
                    d[yy * w + xx] = S::of(dy as f64);
                    d[h * w + yy * w + xx] = S::of(dx as f64);
                }
            }
        }
    }
    Ok(out)
}

fn better(c: (f64, isize, isize, isize), b: (f64, isize, isize, isize)) -> bool {
    if c.0 != b.0 {
        return c.0 < b.0;
    }
    (c.1, c.2, c.3) < (b.1, b.2, b.3)
}

/// Flow map zero-padded to `2 * bins` channels so it can stand in for an event volume.
pub fn flow_volume<S: Scalar>(a: &Image<S>, b: &Image<S>, bins: usize, block: usize, radius: usize) -> Result<Tensor<S>> {
    let flow = block_match(a, b, block, radius)?;
    let (h, w) = (a.height(), a.width());
    let mut data = flow.into_data();
    data.resize(2 * bins * h * w, S::zero());
    Ok(Tensor::from_vec(&[2 * bins, h, w], data)?)
}
