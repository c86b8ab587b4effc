//! Group normalization.

use std::sync::Arc;

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<'g, S: Scalar> Var<'g, S> {
    /// Group normalization over `[N, C, H, W]` with per-channel affine
    /// `gamma`/`beta` (`[C]`).
    pub fn group_norm(self, groups: usize, gamma: Var<'g, S>, beta: Var<'g, S>, eps: f64) -> Var<'g, S> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        assert!(groups >= 1 && c % groups == 0, "{c} channels not divisible into {groups} groups");
        let (gm, bt) = (gamma.value(), beta.value());
        assert_eq!(gm.shape(), &[c]);
        assert_eq!(bt.shape(), &[c]);
        let cpg = c / groups;
        let len = cpg * h * w;
        let plane = h * w;
        let eps = S::of(eps);
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![S::zero(); n * groups];
        for b in 0..n {
            for gi in 0..groups {
                let start = (b * c + gi * cpg) * plane;
                let seg = &x.data()[start..start + len];
                let cnt = S::from_usize_lossy(len);
                let mean = seg.iter().copied().sum::<S>() / cnt;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / cnt;
                let is = S::one() / (var + eps).sqrt();
                inv_std[b * groups + gi] = is;
                for (o, &v) in xhat.data_mut()[start..start + len].iter_mut().zip(seg) {
                    *o = (v - mean) * is;
                }
            }
        }
        let mut y = Tensor::zeros(x.shape());
        for (idx, (dst, src)) in y.data_mut().chunks_mut(plane).zip(xhat.data().chunks(plane)).enumerate() {
            let ch = idx % c;
            let (gv, bv) = (gm.data()[ch], bt.data()[ch]);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = gv * s + bv;
            }
        }
        let xhat = Arc::new(xhat);
        let gm = Arc::clone(&gm);
        self.graph.push(y, &[self.id, gamma.id, beta.id], move |g, need| {
            let gd = g.data();
            let xh = xhat.data();
            let dgamma = need[1].then(|| {
                let mut d = Tensor::zeros(&[c]);
                for (idx, (gp, xp)) in gd.chunks(plane).zip(xh.chunks(plane)).enumerate() {
                    d.data_mut()[idx % c] += gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<S>();
                }
                d
            });
            let dbeta = need[2].then(|| {
                let mut d = Tensor::zeros(&[c]);
                for (idx, gp) in gd.chunks(plane).enumerate() {
                    d.data_mut()[idx % c] += gp.iter().copied().sum::<S>();
                }
                d
            });
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let cnt = S::from_usize_lossy(len);
                for b in 0..n {
                    for gi in 0..groups {
                        let start = (b * c + gi * cpg) * plane;
                        // dxhat = g * gamma
                        let mut sum_d = S::zero();
                        let mut sum_dx = S::zero();
                        for i in 0..len {
                            let ch = gi * cpg + i / plane;
                            let d = gd[start + i] * gm.data()[ch];
                            sum_d += d;
                            sum_dx += d * xh[start + i];
                        }
                        let (mean_d, mean_dx) = (sum_d / cnt, sum_dx / cnt);
                        let is = inv_std[b * groups + gi];
                        for i in 0..len {
                            let ch = gi * cpg + i / plane;
                            let d = gd[start + i] * gm.data()[ch];
                            dx.data_mut()[start + i] = is * (d - mean_d - xh[start + i] * mean_dx);
                        }
                    }
                }
                dx
            });
            vec![dx, dgamma, dbeta]
        })
    }
}
