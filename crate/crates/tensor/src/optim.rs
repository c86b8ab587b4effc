//! Adaptive-moment optimizers.

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero gives plain Adam, non-zero AdamW.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam / AdamW state for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let first = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let second = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, first, second }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Option<Tensor<S>>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bc1 = S::one() - S::of(c.beta1.powi(self.step as i32));
        let bc2 = S::one() - S::of(c.beta2.powi(self.step as i32));
        let lr = S::of(c.lr);
        let eps = S::of(c.eps);
        let decay = S::one() - S::of(c.lr * c.weight_decay);
        for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = grads[idx].as_ref() else { continue };
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if c.weight_decay != 0.0 {
                    p[i] *= decay;
                }
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [Option<Tensor<S>>], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().flatten().map(|g| g.sum_sq().as_f64()).sum::<f64>().sqrt();
    if total > max_norm && total > 0.0 {
        let s = S::of(max_norm / total);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&store, AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..500 {
            let g = store.get(id).map(|v| 2.0 * (v - 1.0));
            opt.step(&mut store, &[Some(g)]);
        }
        for &v in store.get(id).data() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut grads = vec![Some(Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap()), None];
        let norm = clip_grad_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = grads[0].as_ref().unwrap();
        assert!((g.sum_sq().sqrt() - 1.0).abs() < 1e-12);
    }
}
