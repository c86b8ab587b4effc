use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use vfi_tensor::nn::Conv2d;
use vfi_tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};

use super::simulator::{simulate_volume, LOG_EPS};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct I2eConfig {
    pub width: usize,
    pub bins: usize,
    /// Threshold of the simulator used as the regression target.
    pub threshold: f64,
    pub steps: usize,
    pub lr: f64,
}

impl Default for I2eConfig {
    fn default() -> Self {
        Self { width: 16, bins: 9, threshold: 0.1, steps: 300, lr: 2e-3 }
    }
}

/// Small convolutional image-to-event network distilled from the simulator.
///
/// Input channels are the two lumas and their log difference; a softplus head
/// keeps the predicted volume non-negative.
#[derive(Debug, Clone)]
pub struct LearnedI2e<S: Scalar> {
    config: I2eConfig,
    store: ParamStore<S>,
    layers: [Conv2d; 3],
}

impl<S: Scalar> LearnedI2e<S> {
    pub fn new<R: Rng + ?Sized>(config: I2eConfig, rng: &mut R) -> Result<Self> {
        if config.width == 0 || config.bins < 2 {
            return Err(Error::Config("learned backend needs width > 0 and bins >= 2".into()));
        }
        let mut store = ParamStore::new();
        let w = config.width;
        let layers = [
            Conv2d::same3(&mut store, "i2e.conv0", 3, w, rng),
            Conv2d::same3(&mut store, "i2e.conv1", w, w, rng),
            Conv2d::same3(&mut store, "i2e.conv2", w, 2 * config.bins, rng),
        ];
        Ok(Self { config, store, layers })
    }

    pub fn config(&self) -> &I2eConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    fn input(a: &Image<S>, b: &Image<S>) -> Result<Tensor<S>> {
        a.same_shape(b)?;
        let (la, lb) = (a.luma(), b.luma());
        let eps = S::of(LOG_EPS);
        let diff: Vec<S> = la.data().iter().zip(lb.data()).map(|(&p, &q)| (q + eps).ln() - (p + eps).ln()).collect();
        let (h, w) = (a.height(), a.width());
        let mut data = la.data().to_vec();
        data.extend_from_slice(lb.data());
        data.extend(diff);
        Ok(Tensor::from_vec(&[1, 3, h, w], data)?)
    }

    fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Var<'g, S> {
        let h = self.layers[0].forward(g, &self.store, x).silu();
        let h = self.layers[1].forward(g, &self.store, h).silu();
        self.layers[2].forward(g, &self.store, h).softplus()
    }

    /// Predicted `[2B, H, W]` volume for the pair `(a, b)`.
    pub fn predict(&self, a: &Image<S>, b: &Image<S>) -> Result<Tensor<S>> {
        let g = Graph::inference();
        let x = g.constant(Self::input(a, b)?);
        let y = self.forward(&g, x).value();
        let (h, w) = (a.height(), a.width());
        Ok((*y).clone().reshape(&[2 * self.config.bins, h, w])?)
    }

    /// Regresses simulator volumes on the given frame pairs; returns the loss per step.
    pub fn train<R: Rng + ?Sized>(&mut self, pairs: &[(Image<S>, Image<S>)], rng: &mut R) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no frame pairs to distill from".into()));
        }
        let mut samples = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let target = simulate_volume(a, b, self.config.threshold, self.config.bins)?.into_tensor();
            let (h, w) = (a.height(), a.width());
            samples.push((Self::input(a, b)?, target.reshape(&[1, 2 * self.config.bins, h, w])?));
        }
        let mut adam = Adam::new(&self.store, AdamConfig { lr: self.config.lr, ..AdamConfig::default() });
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::with_capacity(self.config.steps);
        for step in 0..self.config.steps {
            if step % order.len() == 0 {
                order.shuffle(rng);
            }
            let (x, target) = &samples[order[step % order.len()]];
            let g = Graph::new();
            let pred = self.forward(&g, g.constant(x.clone()));
            let loss = pred.sub(g.constant(target.clone())).square().mean();
            let value = loss.item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "i2e loss".into(), step, detail: format!("{value}") });
            }
            losses.push(value);
            let grads = g.backward(loss).for_store(&self.store);
            adam.step(&mut self.store, &grads);
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square(offset: usize) -> Image<f64> {
        let mut im = Image::filled(1, 12, 12, 0.2);
        for y in 3..8 {
            for x in offset..offset + 4 {
                im.set(0, y, x, 0.9);
            }
        }
        im
    }

    #[test]
    fn output_is_non_negative_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = LearnedI2e::<f64>::new(I2eConfig { bins: 4, ..I2eConfig::default() }, &mut rng).unwrap();
        let v = net.predict(&square(2), &square(4)).unwrap();
        assert_eq!(v.shape(), &[8, 12, 12]);
        assert!(v.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn distillation_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = I2eConfig { bins: 3, width: 8, steps: 150, lr: 5e-3, threshold: 0.2 };
        let mut net = LearnedI2e::<f64>::new(cfg, &mut rng).unwrap();
        let pairs = vec![(square(2), square(4)), (square(5), square(3))];
        let losses = net.train(&pairs, &mut rng).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }
}
