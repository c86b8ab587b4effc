use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_tensor::optim::clip_grad_norm;
use vfi_tensor::{Adam, AdamConfig, Graph, Scalar, Tensor, Var};

use super::config::CodecTrainConfig;
use super::discriminator::{hinge_disc_loss, hinge_gen_loss, PatchDiscriminator};
use super::model::Codec;
use super::quantize::perplexity;
use crate::data::{AugmentDraw, FrameTriplet};
use crate::error::{Error, Result};
use crate::event_motion::{empty_hints, extract_motion_hints, HintBackend, MotionHints};
use crate::image::Image;

/// Bernoulli hint dropout used during codec training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HintDropout {
    pub p: f64,
}

impl HintDropout {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random_bool(self.p)
    }
}

/// Horizontal and vertical Sobel responses per channel, `[N, 2C, H, W]`.
pub fn sobel<'g, S: Scalar>(g: &'g Graph<S>, x: Var<'g, S>) -> Var<'g, S> {
    let c = x.dims4().1;
    const KX: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    const KY: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let mut w = vec![S::zero(); 2 * c * c * 9];
    for ch in 0..c {
        for (k, (&kx, &ky)) in KX.iter().zip(&KY).enumerate() {
            w[((2 * ch) * c + ch) * 9 + k] = S::of(kx);
            w[((2 * ch + 1) * c + ch) * 9 + k] = S::of(ky);
        }
    }
    let w = g.constant(Tensor::from_vec(&[2 * c, c, 3, 3], w).expect("kernel size"));
    x.conv2d(w, None, 1, 1)
}

/// Mean absolute difference of Sobel responses.
pub fn edge_l1<'g, S: Scalar>(g: &'g Graph<S>, a: Var<'g, S>, b: Var<'g, S>) -> Var<'g, S> {
    sobel(g, a).sub(sobel(g, b)).abs().mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecStepStats {
    pub step: usize,
    pub loss: f64,
    pub l1: f64,
    pub edge: f64,
    pub vq: f64,
    pub adv: f64,
    pub disc: f64,
    pub dropped: usize,
    pub batch: usize,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainReport {
    pub steps_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub dropout_rate: f64,
    pub stopped_early: bool,
    pub losses: Vec<f64>,
}

/// Codec, discriminator and their optimiser state.
#[derive(Debug, Clone)]
pub struct CodecTrainer<S: Scalar> {
    pub codec: Codec<S>,
    pub disc: PatchDiscriminator<S>,
    pub config: CodecTrainConfig,
    pub opt: Adam<S>,
    pub disc_opt: Adam<S>,
    pub step: usize,
    pub rng: ChaCha8Rng,
}

const SMOOTH: usize = 10;

impl<S: Scalar> CodecTrainer<S> {
    pub fn new(codec: Codec<S>, config: CodecTrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disc = PatchDiscriminator::new(codec.config().image_channels, config.disc_width, &mut rng);
        let opt = Adam::new(codec.store(), AdamConfig { lr: config.lr, beta1: 0.5, beta2: 0.9, ..AdamConfig::default() });
        let disc_opt =
            Adam::new(disc.store(), AdamConfig { lr: config.disc_lr, beta1: 0.5, beta2: 0.9, ..AdamConfig::default() });
        Ok(Self { codec, disc, config, opt, disc_opt, step: 0, rng })
    }

    fn adversarial_active(&self) -> bool {
        self.config.lambda_adv > 0.0 && self.step as f64 >= self.config.adv_warmup * self.config.steps as f64
    }

    fn batch(&mut self, data: &[FrameTriplet<S>]) -> Result<Vec<FrameTriplet<S>>> {
        let mut out = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let t = &data[self.rng.random_range(0..data.len())];
            if self.config.augment {
                let (_, h, w) = t.dims();
                out.push(AugmentDraw::sample(h, w, self.config.crop, &mut self.rng)?.apply(t));
            } else {
                out.push(t.clone());
            }
        }
        Ok(out)
    }

    /// One generator update (and one discriminator update once adversarial
    /// training is active).
    pub fn train_step(&mut self, data: &[FrameTriplet<S>], backend: &HintBackend<S>) -> Result<CodecStepStats> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let batch = self.batch(data)?;
        let dropout = HintDropout { p: self.config.hint_dropout };
        let (_, h, w) = batch[0].dims();
        let bins = self.codec.config().bins;
        let mut hints = Vec::with_capacity(batch.len());
        let mut dropped = 0;
        for t in &batch {
            let drop = dropout.sample(&mut self.rng);
            if drop || !self.codec.config().use_hints {
                dropped += usize::from(drop);
                hints.push(empty_hints(h, w, bins));
            } else {
                hints.push(extract_motion_hints(&t.prev, &t.mid, &t.next, backend)?);
            }
        }
        let refs: Vec<&MotionHints<S>> = hints.iter().collect();
        let (m_prev, m_next) = MotionHints::stack(&refs)?;
        let stack = |f: fn(&FrameTriplet<S>) -> &Image<S>| Image::stack(&batch.iter().map(f).collect::<Vec<_>>());
        let prev = stack(|t| &t.prev)?;
        let mid = stack(|t| &t.mid)?;
        let next = stack(|t| &t.next)?;

        let cfg = self.config.clone();
        let adv_on = self.adversarial_active();
        let g = Graph::new();
        let codec = &self.codec;
        let (_, pp) = codec.encode_graph(&g, g.constant(prev))?;
        let (z, _) = codec.encode_graph(&g, g.constant(mid.clone()))?;
        let (_, pn) = codec.encode_graph(&g, g.constant(next))?;
        let q = codec.quantize_graph(&g, z, cfg.commitment)?;
        let recon = codec.decode_graph(&g, q.z_q, &pp, &pn, g.constant(m_prev), g.constant(m_next))?;
        let target = g.constant(mid.clone());
        let l1 = recon.sub(target).abs().mean();
        let edge = edge_l1(&g, recon, target);
        let mut loss = l1.add(edge.scale(S::of(cfg.lambda_percep))).add(q.loss);
        let mut adv = 0.0;
        if adv_on {
            let a = hinge_gen_loss(self.disc.forward(&g, recon));
            adv = a.item().as_f64();
            loss = loss.add(a.scale(S::of(cfg.lambda_adv)));
        }
        let stats_loss = loss.item().as_f64();
        let (l1v, edgev, vqv) = (l1.item().as_f64(), edge.item().as_f64(), q.loss.item().as_f64());
        if !stats_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "codec loss".into(),
                step: self.step,
                detail: format!("l1={l1v} edge={edgev} vq={vqv} adv={adv}"),
            });
        }
        let mut grads = g.backward(loss).for_store(codec.store());
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut grads, cfg.grad_clip);
        }
        let fake = (*recon.value()).clone();
        let ppl = perplexity(&q.indices, codec.config().codebook_size);
        drop(g);
        self.opt.step(self.codec.store_mut(), &grads);

        let mut disc = 0.0;
        if adv_on {
            let g = Graph::new();
            let d = hinge_disc_loss(self.disc.forward(&g, g.constant(mid)), self.disc.forward(&g, g.constant(fake)));
            disc = d.item().as_f64();
            if !disc.is_finite() {
                return Err(Error::NonFinite { what: "discriminator loss".into(), step: self.step, detail: format!("{disc}") });
            }
            let mut grads = g.backward(d).for_store(self.disc.store());
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            drop(g);
            self.disc_opt.step(self.disc.store_mut(), &grads);
        }
        let stats = CodecStepStats {
            step: self.step,
            loss: stats_loss,
            l1: l1v,
            edge: edgev,
            vq: vqv,
            adv,
            disc,
            dropped,
            batch: batch.len(),
            perplexity: ppl,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Runs until `config.steps` total steps or early stopping.
    pub fn train(
        &mut self,
        data: &[FrameTriplet<S>],
        backend: &HintBackend<S>,
        mut on_step: impl FnMut(&CodecStepStats),
    ) -> Result<CodecTrainReport> {
        let mut losses = Vec::new();
        let (mut dropped, mut seen) = (0usize, 0usize);
        let mut stopped_early = false;
        while self.step < self.config.steps {
            let s = self.train_step(data, backend)?;
            on_step(&s);
            losses.push(s.loss);
            dropped += s.dropped;
            seen += s.batch;
            if let Some(frac) = self.config.early_stop {
                if losses.len() >= SMOOTH && smoothed(&losses) < frac * losses[0] {
                    stopped_early = true;
                    break;
                }
            }
        }
        Ok(CodecTrainReport {
            steps_run: losses.len(),
            initial_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: if losses.is_empty() { f64::NAN } else { smoothed(&losses) },
            dropout_rate: if seen == 0 { 0.0 } else { dropped as f64 / seen as f64 },
            stopped_early,
            losses,
        })
    }
}

/// Mean of the last few entries.
pub(crate) fn smoothed(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(SMOOTH)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_rate_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = HintDropout { p: 0.5 };
        let hits = (0..10_000).filter(|_| d.sample(&mut rng)).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    #[test]
    fn sobel_of_ramp() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let s = sobel(&g, g.constant(x)).value();
        assert_eq!(s.at4(0, 0, 1, 1), 8.0);
        assert_eq!(s.at4(0, 1, 1, 1), 0.0);
    }
}
