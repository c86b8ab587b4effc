//! Batched matrix products, row softmax and dense layers.

use std::sync::Arc;

use crate::graph::Var;
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

fn bmm_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> (usize, usize, usize, usize) {
    assert!(a.len() == 3 && b.len() == 3 && a[0] == b[0], "bmm expects [B, _, _] operands");
    let (m, k) = if ta { (a[2], a[1]) } else { (a[1], a[2]) };
    let (kb, n) = if tb { (b[2], b[1]) } else { (b[1], b[2]) };
    assert_eq!(k, kb, "bmm inner dimension mismatch");
    (a[0], m, k, n)
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Batched product `op(a) @ op(b)` where `op` optionally transposes the
    /// two trailing axes.
    pub fn bmm(self, other: Var<'g, S>, trans_a: bool, trans_b: bool) -> Var<'g, S> {
        let (a, b) = (self.value(), other.value());
        let (batch, m, k, n) = bmm_dims(a.shape(), b.shape(), trans_a, trans_b);
        let mut y = Tensor::zeros(&[batch, m, n]);
        for i in 0..batch {
            matmul(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                trans_a,
                &b.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut y.data_mut()[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let (a, b) = (Arc::clone(&a), Arc::clone(&b));
        self.graph.push(y, &[self.id, other.id], move |g, need| {
            let da = need[0].then(|| {
                let mut da = Tensor::zeros(a.shape());
                for i in 0..batch {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let bi = &b.data()[i * k * n..(i + 1) * k * n];
                    let dst = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
                    if trans_a {
                        // dA (k x m) = op(B) (k x n) * G^T (n x m)
                        matmul(k, n, m, bi, trans_b, gi, true, dst, false);
                    } else {
                        // dA (m x k) = G (m x n) * op(B)^T (n x k)
                        matmul(m, n, k, gi, false, bi, !trans_b, dst, false);
                    }
                }
                da
            });
            let db = need[1].then(|| {
                let mut db = Tensor::zeros(b.shape());
                for i in 0..batch {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    let ai = &a.data()[i * m * k..(i + 1) * m * k];
                    let dst = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                    if trans_b {
                        // dB (n x k) = G^T (n x m) * op(A) (m x k)
                        matmul(n, m, k, gi, true, ai, trans_a, dst, false);
                    } else {
                        // dB (k x n) = op(A)^T (k x m) * G (m x n)
                        matmul(k, m, n, ai, !trans_a, gi, false, dst, false);
                    }
                }
                db
            });
            vec![da, db]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'g, S> {
        let x = self.value();
        let width = *x.shape().last().expect("softmax on rank-0 tensor");
        let mut y = Tensor::zeros(x.shape());
        for (src, dst) in x.data().chunks(width).zip(y.data_mut().chunks_mut(width)) {
            let max = src.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let mut total = S::zero();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let y = Arc::new(y);
        let yk = Arc::clone(&y);
        self.graph.push_shared(y, &[self.id], move |g, _| {
            let mut dx = Tensor::zeros(yk.shape());
            for ((yr, gr), dr) in
                yk.data().chunks(width).zip(g.data().chunks(width)).zip(dx.data_mut().chunks_mut(width))
            {
                let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Dense layer: `x [N, in]`, `weight [out, in]`, `bias [out]`.
    pub fn linear(self, weight: Var<'g, S>, bias: Option<Var<'g, S>>) -> Var<'g, S> {
        let (x, wt) = (self.value(), weight.value());
        assert_eq!(x.shape().len(), 2, "linear expects [N, in]");
        let (n, fin) = (x.shape()[0], x.shape()[1]);
        let fout = wt.shape()[0];
        assert_eq!(wt.shape(), &[fout, fin], "linear weight shape");
        let mut y = Tensor::zeros(&[n, fout]);
        matmul(n, fin, fout, x.data(), false, wt.data(), true, y.data_mut(), false);
        let bv = bias.map(|b| b.value());
        if let Some(bv) = bv.as_ref() {
            for row in y.data_mut().chunks_mut(fout) {
                for (r, &b) in row.iter_mut().zip(bv.data()) {
                    *r += b;
                }
            }
        }
        let mut ids = vec![self.id, weight.id];
        if let Some(b) = bias {
            ids.push(b.id);
        }
        let has_bias = bias.is_some();
        let (x, wt) = (Arc::clone(&x), Arc::clone(&wt));
        self.graph.push(y, &ids, move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(&[n, fin]);
                matmul(n, fout, fin, g.data(), false, wt.data(), false, dx.data_mut(), false);
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = Tensor::zeros(&[fout, fin]);
                matmul(fout, n, fin, g.data(), true, x.data(), false, dw.data_mut(), false);
                dw
            });
            let mut out = vec![dx, dw];
            if has_bias {
                out.push(need[2].then(|| {
                    let mut db = Tensor::zeros(&[fout]);
                    for row in g.data().chunks(fout) {
                        for (d, &r) in db.data_mut().iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    db
                }));
            }
            out
        })
    }
}
