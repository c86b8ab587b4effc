use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_tensor::optim::clip_grad_norm;
use vfi_tensor::{Adam, AdamConfig, Graph, Scalar, Tensor};

use super::config::DenoiserTrainConfig;
use super::model::Denoiser;
use crate::codec::Codec;
use crate::data::{AugmentDraw, FrameTriplet};
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::event_motion::{empty_hints, extract_motion_hints, HintBackend, MotionHints};
use crate::image::Image;

/// `t ~ Uniform{1, ..., T}`.
pub fn sample_timestep<R: Rng + ?Sized>(steps: usize, rng: &mut R) -> usize {
    rng.random_range(1..=steps)
}

/// Quantised codec latents of a triplet plus its teacher-forced hints.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTriplet<S> {
    pub z_prev: Tensor<S>,
    pub z_mid: Tensor<S>,
    pub z_next: Tensor<S>,
    pub m_prev: Tensor<S>,
    pub m_next: Tensor<S>,
}

/// Encodes and quantises all three frames; hints come from the true middle frame.
pub fn encode_triplet<S: Scalar>(
    codec: &Codec<S>,
    t: &FrameTriplet<S>,
    backend: Option<&HintBackend<S>>,
    bins: usize,
) -> Result<LatentTriplet<S>> {
    let images = Image::stack(&[&t.prev, &t.mid, &t.next])?;
    let (z, _) = codec.encode(&images)?;
    let q = codec.quantize(&z, 0.0)?.z_q;
    let (_, h, w) = t.dims();
    let hints = match backend {
        Some(b) => extract_motion_hints(&t.prev, &t.mid, &t.next, b)?,
        None => empty_hints(h, w, bins),
    };
    let (m_prev, m_next) = MotionHints::stack(&[&hints])?;
    Ok(LatentTriplet { z_prev: q.slice_batch(0, 1), z_mid: q.slice_batch(1, 1), z_next: q.slice_batch(2, 1), m_prev, m_next })
}

/// `1 / std` of quantised middle-frame latents over (up to 64 of) `data`.
pub fn fit_latent_scale<S: Scalar>(codec: &Codec<S>, data: &[FrameTriplet<S>]) -> Result<f64> {
    let mut values = Vec::new();
    for t in data.iter().take(64) {
        let (z, _) = codec.encode(&t.mid.to_batch())?;
        values.extend(codec.quantize(&z, 0.0)?.z_q.data().iter().map(|v| v.as_f64()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no data to fit the latent scale".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserStepStats {
    pub step: usize,
    pub loss: f64,
    pub probe_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainReport {
    pub steps_run: usize,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    pub stopped_early: bool,
    pub losses: Vec<f64>,
}

/// Fixed draws for a low-variance loss estimate.
#[derive(Debug, Clone)]
struct Probe<S> {
    items: Vec<(usize, usize, Tensor<S>)>,
}

/// Denoiser training state; the codec is frozen and passed per call.
#[derive(Debug, Clone)]
pub struct DenoiserTrainer<S: Scalar> {
    pub denoiser: Denoiser<S>,
    pub config: DenoiserTrainConfig,
    pub opt: Adam<S>,
    pub step: usize,
    pub rng: ChaCha8Rng,
    schedule: NoiseSchedule,
    cache: Vec<Option<LatentTriplet<S>>>,
    probe: Option<Probe<S>>,
}

impl<S: Scalar> DenoiserTrainer<S> {
    pub fn new(denoiser: Denoiser<S>, config: DenoiserTrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let schedule = denoiser.schedule().build()?;
        let opt = Adam::new(
            denoiser.store(),
            AdamConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamConfig::default() },
        );
        Ok(Self { denoiser, config, opt, step: 0, rng: ChaCha8Rng::seed_from_u64(seed), schedule, cache: Vec::new(), probe: None })
    }

    fn check_codec(&self, codec: &Codec<S>) -> Result<()> {
        let (c, d) = (codec.config(), self.denoiser.config());
        if c.embed_dim != d.latent_channels || c.bins != d.bins {
            return Err(Error::Config(format!(
                "codec (embed_dim {}, bins {}) does not match denoiser (latent_channels {}, bins {})",
                c.embed_dim, c.bins, d.latent_channels, d.bins
            )));
        }
        Ok(())
    }

    fn latents(
        &mut self,
        codec: &Codec<S>,
        data: &[FrameTriplet<S>],
        index: usize,
        backend: &HintBackend<S>,
    ) -> Result<LatentTriplet<S>> {
        let backend = self.denoiser.config().use_hints.then_some(backend);
        let bins = self.denoiser.config().bins;
        if self.config.augment {
            let t = &data[index];
            let (_, h, w) = t.dims();
            let t = AugmentDraw::sample(h, w, self.config.crop, &mut self.rng)?.apply(t);
            return encode_triplet(codec, &t, backend, bins);
        }
        if self.cache.len() != data.len() {
            self.cache = vec![None; data.len()];
        }
        if self.cache[index].is_none() {
            self.cache[index] = Some(encode_triplet(codec, &data[index], backend, bins)?);
        }
        Ok(self.cache[index].clone().expect("filled above"))
    }

    fn loss_on(&self, items: &[(LatentTriplet<S>, usize, Tensor<S>)], grad: bool) -> Result<(f64, Option<Vec<Option<Tensor<S>>>>)> {
        let scale = S::of(self.denoiser.latent_scale);
        let mut z_t = Vec::new();
        let mut ts = Vec::new();
        let (mut zp, mut zn, mut mp, mut mn, mut eps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (lt, t, e) in items {
            z_t.push(q_sample(&lt.z_mid.scale(scale), *t, e, &self.schedule)?);
            ts.push(*t);
            zp.push(lt.z_prev.scale(scale));
            zn.push(lt.z_next.scale(scale));
            mp.push(&lt.m_prev);
            mn.push(&lt.m_next);
            eps.push(e);
        }
        let cat = |v: &[&Tensor<S>]| Tensor::cat_batch(v);
        let g = if grad { Graph::new() } else { Graph::inference() };
        let pred = self.denoiser.forward_graph(
            &g,
            g.constant(cat(&z_t.iter().collect::<Vec<_>>())?),
            &ts,
            g.constant(cat(&zp.iter().collect::<Vec<_>>())?),
            g.constant(cat(&zn.iter().collect::<Vec<_>>())?),
            g.constant(cat(&mp)?),
            g.constant(cat(&mn)?),
        )?;
        let loss = pred.sub(g.constant(cat(&eps)?)).square().mean();
        let value = loss.item().as_f64();
        let grads = grad.then(|| g.backward(loss).for_store(self.denoiser.store()));
        Ok((value, grads))
    }

    /// Loss on the fixed probe set, built from the first triplets on first use.
    pub fn probe_loss(&mut self, codec: &Codec<S>, data: &[FrameTriplet<S>], backend: &HintBackend<S>) -> Result<f64> {
        if self.probe.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut items = Vec::new();
            for k in 0..self.config.probe_draws.max(1) {
                let idx = k % data.len();
                let z = &self.latents_plain(codec, data, idx, backend)?.z_mid;
                let t = sample_timestep(self.schedule.steps(), &mut rng);
                items.push((idx, t, Tensor::randn(z.shape(), &mut rng)));
            }
            self.probe = Some(Probe { items });
        }
        let items = self.probe.clone().expect("built above").items;
        let mut batch = Vec::with_capacity(items.len());
        for (idx, t, e) in items {
            batch.push((self.latents_plain(codec, data, idx, backend)?, t, e));
        }
        Ok(self.loss_on(&batch, false)?.0)
    }

    /// Un-augmented latents, cached.
    fn latents_plain(
        &mut self,
        codec: &Codec<S>,
        data: &[FrameTriplet<S>],
        index: usize,
        backend: &HintBackend<S>,
    ) -> Result<LatentTriplet<S>> {
        let augment = std::mem::replace(&mut self.config.augment, false);
        let out = self.latents(codec, data, index, backend);
        self.config.augment = augment;
        out
    }

    pub fn train_step(&mut self, codec: &Codec<S>, data: &[FrameTriplet<S>], backend: &HintBackend<S>) -> Result<DenoiserStepStats> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        self.check_codec(codec)?;
        let mut items = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx = self.rng.random_range(0..data.len());
            let lt = self.latents(codec, data, idx, backend)?;
            let t = sample_timestep(self.schedule.steps(), &mut self.rng);
            let eps = Tensor::randn(lt.z_mid.shape(), &mut self.rng);
            items.push((lt, t, eps));
        }
        let (loss, grads) = self.loss_on(&items, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "denoiser loss".into(), step: self.step, detail: format!("{loss}") });
        }
        let mut grads = grads.expect("gradients requested");
        if self.config.grad_clip > 0.0 {
            clip_grad_norm(&mut grads, self.config.grad_clip);
        }
        self.opt.step(self.denoiser.store_mut(), &grads);
        self.step += 1;
        Ok(DenoiserStepStats { step: self.step - 1, loss, probe_loss: None })
    }

    /// Fits the latent scale on a fresh run, then trains until `config.steps`
    /// or early stopping on the probe loss.
    pub fn train(
        &mut self,
        codec: &Codec<S>,
        data: &[FrameTriplet<S>],
        backend: &HintBackend<S>,
        mut on_step: impl FnMut(&DenoiserStepStats),
    ) -> Result<DenoiserTrainReport> {
        self.check_codec(codec)?;
        if self.step == 0 {
            self.denoiser.latent_scale = fit_latent_scale(codec, data)?;
        }
        let initial = self.probe_loss(codec, data, backend)?;
        let mut last_probe = initial;
        let mut losses = Vec::new();
        let mut stopped_early = false;
        while self.step < self.config.steps {
            let mut s = self.train_step(codec, data, backend)?;
            losses.push(s.loss);
            if self.step % self.config.probe_every == 0 || self.step == self.config.steps {
                last_probe = self.probe_loss(codec, data, backend)?;
                s.probe_loss = Some(last_probe);
            }
            on_step(&s);
            if let (Some(frac), Some(p)) = (self.config.early_stop, s.probe_loss) {
                if p < frac * initial {
                    stopped_early = true;
                    break;
                }
            }
        }
        Ok(DenoiserTrainReport { steps_run: losses.len(), initial_probe_loss: initial, final_probe_loss: last_probe, stopped_early, losses })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timesteps_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t_max = 50;
        let n = 100_000;
        let mut counts = vec![0usize; t_max];
        for _ in 0..n {
            let t = sample_timestep(t_max, &mut rng);
            assert!((1..=t_max).contains(&t));
            counts[t - 1] += 1;
        }
        let expect = n as f64 / t_max as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99th percentile of chi-square with 49 degrees of freedom
        assert!(chi2 < 74.92, "chi2 {chi2}");
    }
}
