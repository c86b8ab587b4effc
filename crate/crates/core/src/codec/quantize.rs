use vfi_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};

/// Index of the codebook row nearest to each latent position.
///
/// `z` is `[N, D, H, W]`, `codebook` is `[K, D]`; ties go to the lowest index.
pub fn nearest_codes<S: Scalar>(z: &Tensor<S>, codebook: &Tensor<S>) -> Result<Vec<usize>> {
    let (n, d, h, w) = z.dims4();
    if codebook.shape().len() != 2 || codebook.shape()[0] == 0 {
        return Err(Error::Shape(format!("empty or malformed codebook {:?}", codebook.shape())));
    }
    if codebook.shape()[1] != d {
        return Err(Error::Shape(format!("codebook width {} != latent channels {d}", codebook.shape()[1])));
    }
    let plane = h * w;
    let zd = z.data();
    let mut out = Vec::with_capacity(n * plane);
    let mut v = vec![S::zero(); d];
    for b in 0..n {
        for i in 0..plane {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj = zd[(b * d + j) * plane + i];
            }
            let mut best = (0, S::infinity());
            for (k, row) in codebook.data().chunks(d).enumerate() {
                let dist: S = row.iter().zip(&v).map(|(&e, &x)| (x - e) * (x - e)).sum();
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            out.push(best.0);
        }
    }
    Ok(out)
}

/// Plain quantisation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<S> {
    pub z_q: Tensor<S>,
    pub indices: Vec<usize>,
    pub vq_loss: f64,
}

/// Nearest-entry quantisation outside of any graph.
///
/// `vq_loss` is `mse(z, e) * (1 + commitment)`, the value of the training loss.
pub fn quantize<S: Scalar>(z: &Tensor<S>, codebook: &Tensor<S>, commitment: f64) -> Result<Quantized<S>> {
    let indices = nearest_codes(z, codebook)?;
    let z_q = gather(codebook, &indices, z.shape());
    let mse = z.zip_map(&z_q, |a, b| (a - b) * (a - b)).mean().as_f64();
    Ok(Quantized { z_q, indices, vq_loss: mse * (1.0 + commitment) })
}

fn gather<S: Scalar>(codebook: &Tensor<S>, indices: &[usize], shape: &[usize]) -> Tensor<S> {
    let (n, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    for (pos, &k) in indices.iter().enumerate() {
        let (b, i) = (pos / plane, pos % plane);
        for j in 0..d {
            od[(b * d + j) * plane + i] = codebook.data()[k * d + j];
        }
    }
    debug_assert_eq!(indices.len(), n * plane);
    out
}

/// In-graph quantisation.
pub struct QuantizedVar<'g, S: Scalar> {
    /// Codebook rows in value, identity gradient to `z`.
    pub z_q: Var<'g, S>,
    pub indices: Vec<usize>,
    /// `mse(sg[z], e) + commitment * mse(z, sg[e])`.
    pub loss: Var<'g, S>,
}

pub fn quantize_var<'g, S: Scalar>(z: Var<'g, S>, codebook: Var<'g, S>, commitment: f64) -> Result<QuantizedVar<'g, S>> {
    let indices = nearest_codes(&z.value(), &codebook.value())?;
    let (n, _, h, w) = z.dims4();
    let e = codebook.gather_rows(&indices, n, h, w);
    let codebook_term = z.detach().sub(e).square().mean();
    let commit_term = z.sub(e.detach()).square().mean().scale(S::of(commitment));
    Ok(QuantizedVar { z_q: z.straight_through(e), indices, loss: codebook_term.add(commit_term) })
}

/// Perplexity of code usage, `exp(entropy)`.
pub fn perplexity(indices: &[usize], codebook_size: usize) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; codebook_size];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum();
    h.exp()
}
