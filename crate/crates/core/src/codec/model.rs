use rand::Rng;
use vfi_tensor::nn::Conv2d;
use vfi_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use super::config::CodecConfig;
use super::quantize::{quantize, quantize_var, Quantized, QuantizedVar};
use crate::error::{Error, Result};
use crate::event_motion::MotionHints;
use crate::ma_warp::{MaWarp, WarpInputs};
use crate::nets::ResBlock;

/// Encoder activations of one frame; level `l` (0-based) is at `H / 2^(l+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<S> {
    pub levels: Vec<Tensor<S>>,
}

impl<S: Scalar> FeaturePyramid<S> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn as_vars<'g>(&self, g: &'g Graph<S>) -> Vec<Var<'g, S>> {
        self.levels.iter().map(|t| g.constant(t.clone())).collect()
    }
}

/// Vector-quantised autoencoder whose decoder aggregates neighbour features
/// through one MA-Warp block per pyramid level.
#[derive(Debug, Clone)]
pub struct Codec<S: Scalar> {
    config: CodecConfig,
    store: ParamStore<S>,
    codebook: ParamId,
    enc_in: Conv2d,
    enc_down: Vec<Conv2d>,
    enc_res: Vec<ResBlock>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec_up: Vec<Conv2d>,
    dec_res: Vec<ResBlock>,
    dec_warp: Vec<MaWarp>,
    head_up: Conv2d,
    head_out: Conv2d,
}

impl<S: Scalar> Codec<S> {
    pub fn new<R: Rng + ?Sized>(config: CodecConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let levels = config.pyramid_levels;
        let w = |l: usize| config.width(l);
        let k = config.codebook_size;
        let codebook = ps.add("codebook", Tensor::uniform(&[k, config.embed_dim], 1.0 / k as f64, rng));
        let enc_in = Conv2d::same3(&mut ps, "enc.in", config.image_channels, w(1), rng);
        let mut enc_down = Vec::new();
        let mut enc_res = Vec::new();
        for l in 1..=levels {
            let cin = if l == 1 { w(1) } else { w(l - 1) };
            enc_down.push(Conv2d::new(&mut ps, &format!("enc.down{l}"), cin, w(l), 4, 2, 1, rng));
            enc_res.push(ResBlock::new(&mut ps, &format!("enc.res{l}"), w(l), w(l), None, rng));
        }
        let enc_out = Conv2d::same3(&mut ps, "enc.out", w(levels), config.embed_dim, rng);
        let dec_in = Conv2d::same3(&mut ps, "dec.in", config.embed_dim, w(levels), rng);
        let mut dec_up = Vec::new();
        let mut dec_res = Vec::new();
        let mut dec_warp = Vec::new();
        for l in 1..=levels {
            if l < levels {
                dec_up.push(Conv2d::same3(&mut ps, &format!("dec.up{l}"), w(l + 1), w(l), rng));
            }
            dec_res.push(ResBlock::new(&mut ps, &format!("dec.res{l}"), w(l), w(l), None, rng));
            dec_warp.push(MaWarp::new(&mut ps, &format!("dec.warp{l}"), w(l), config.hint_channels(), rng));
        }
        let head_up = Conv2d::same3(&mut ps, "dec.head_up", w(1), w(1), rng);
        let head_out = Conv2d::same3(&mut ps, "dec.head_out", w(1), config.image_channels, rng);
        Ok(Self {
            config,
            store: ps,
            codebook,
            enc_in,
            enc_down,
            enc_res,
            enc_out,
            dec_in,
            dec_up,
            dec_res,
            dec_warp,
            head_up,
            head_out,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn codebook(&self) -> &Tensor<S> {
        self.store.get(self.codebook)
    }

    pub fn codebook_var<'g>(&self, g: &'g Graph<S>) -> Var<'g, S> {
        g.param(&self.store, self.codebook)
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.config.image_channels {
            return Err(Error::Shape(format!(
                "codec expects [N, {}, H, W] images, got {shape:?}",
                self.config.image_channels
            )));
        }
        self.config.check_resolution(shape[2], shape[3])
    }

    /// Latent `[N, D, H/f, W/f]` and pyramid taps, one per level.
    pub fn encode_graph<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<(Var<'g, S>, Vec<Var<'g, S>>)> {
        self.check_images(&x.shape())?;
        let ps = &self.store;
        let mut h = self.enc_in.forward(g, ps, x).silu();
        let mut taps = Vec::with_capacity(self.config.pyramid_levels);
        for (down, res) in self.enc_down.iter().zip(&self.enc_res) {
            h = res.forward(g, ps, down.forward(g, ps, h), None).silu();
            taps.push(h);
        }
        Ok((self.enc_out.forward(g, ps, h), taps))
    }

    pub fn quantize_graph<'g>(&self, g: &'g Graph<S>, z: Var<'g, S>, commitment: f64) -> Result<QuantizedVar<'g, S>> {
        quantize_var(z, self.codebook_var(g), commitment)
    }

    /// Decodes `z_q` with neighbour pyramids and `[N, 2B, H, W]` hint volumes.
    pub fn decode_graph<'g>(
        &self,
        g: &'g Graph<S>,
        z_q: Var<'g, S>,
        phi_prev: &[Var<'g, S>],
        phi_next: &[Var<'g, S>],
        m_prev: Var<'g, S>,
        m_next: Var<'g, S>,
    ) -> Result<Var<'g, S>> {
        let levels = self.config.pyramid_levels;
        let (n, d, lh, lw) = z_q.dims4();
        if d != self.config.embed_dim {
            return Err(Error::Shape(format!("latent has {d} channels, codec expects {}", self.config.embed_dim)));
        }
        if phi_prev.len() != levels || phi_next.len() != levels {
            return Err(Error::Shape(format!(
                "decoder needs {levels} pyramid levels, got {} and {}",
                phi_prev.len(),
                phi_next.len()
            )));
        }
        let (mn, mc, mh, mw) = m_prev.dims4();
        if m_next.dims4() != (mn, mc, mh, mw) || mn != n || mc != self.config.hint_channels() {
            return Err(Error::Shape(format!("hint batches {:?} / {:?}", m_prev.shape(), m_next.shape())));
        }
        let (m_prev, m_next) = if self.config.use_hints {
            (m_prev, m_next)
        } else {
            let zero = g.constant(Tensor::zeros(&[mn, mc, mh, mw]));
            (zero, zero)
        };
        let ps = &self.store;
        let mut h = self.dec_in.forward(g, ps, z_q).silu();
        for l in (1..=levels).rev() {
            if l < levels {
                h = self.dec_up[l - 1].forward(g, ps, h.upsample_nearest2x());
            }
            h = self.dec_res[l - 1].forward(g, ps, h, None);
            let expected = (lh << (levels - l), lw << (levels - l));
            let (_, _, fh, fw) = phi_prev[l - 1].dims4();
            if (fh, fw) != expected {
                return Err(Error::Shape(format!("pyramid level {l} is {fh}x{fw}, expected {expected:?}")));
            }
            let inputs = WarpInputs { h, phi_prev: phi_prev[l - 1], phi_next: phi_next[l - 1], m_prev, m_next };
            h = h.add(self.dec_warp[l - 1].forward(g, ps, inputs)?);
        }
        let h = self.head_up.forward(g, ps, h.upsample_nearest2x()).silu();
        Ok(self.head_out.forward(g, ps, h).sigmoid())
    }

    pub fn encode(&self, images: &Tensor<S>) -> Result<(Tensor<S>, FeaturePyramid<S>)> {
        let g = Graph::inference();
        let (z, taps) = self.encode_graph(&g, g.constant(images.clone()))?;
        let levels = taps.iter().map(|t| (*t.value()).clone()).collect();
        Ok(((*z.value()).clone(), FeaturePyramid { levels }))
    }

    pub fn quantize(&self, z: &Tensor<S>, commitment: f64) -> Result<Quantized<S>> {
        quantize(z, self.codebook(), commitment)
    }

    pub fn decode(
        &self,
        z_q: &Tensor<S>,
        phi_prev: &FeaturePyramid<S>,
        phi_next: &FeaturePyramid<S>,
        m_prev: &Tensor<S>,
        m_next: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let g = Graph::inference();
        let out = self.decode_graph(
            &g,
            g.constant(z_q.clone()),
            &phi_prev.as_vars(&g),
            &phi_next.as_vars(&g),
            g.constant(m_prev.clone()),
            g.constant(m_next.clone()),
        )?;
        Ok((*out.value()).clone())
    }

    /// Single-item decode with a hint pair.
    pub fn decode_with_hints(
        &self,
        z_q: &Tensor<S>,
        phi_prev: &FeaturePyramid<S>,
        phi_next: &FeaturePyramid<S>,
        hints: &MotionHints<S>,
    ) -> Result<Tensor<S>> {
        let (fwd, bwd) = MotionHints::stack(&[hints])?;
        self.decode(z_q, phi_prev, phi_next, &fwd, &bwd)
    }

    /// Quantises a continuous latent (e.g. a diffusion estimate) and decodes it.
    pub fn decode_latent(
        &self,
        z: &Tensor<S>,
        phi_prev: &FeaturePyramid<S>,
        phi_next: &FeaturePyramid<S>,
        hints: &MotionHints<S>,
    ) -> Result<Tensor<S>> {
        let q = self.quantize(z, 0.0)?;
        self.decode_with_hints(&q.z_q, phi_prev, phi_next, hints)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_motion::{empty_hints, HintSource};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> CodecConfig {
        CodecConfig {
            image_channels: 1,
            factor: 4,
            pyramid_levels: 2,
            codebook_size: 16,
            embed_dim: 4,
            base_width: 8,
            bins: 2,
            use_hints: true,
        }
    }

    fn codec() -> Codec<f64> {
        Codec::new(tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn image(seed: u64) -> Tensor<f64> {
        Tensor::uniform(&[1, 1, 16, 16], 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v + 0.5)
    }

    #[test]
    fn encode_shapes() {
        let c = Codec::<f64>::new(
            CodecConfig { factor: 8, pyramid_levels: 3, ..tiny() },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let (z, pyr) = c.encode(&Tensor::zeros(&[1, 1, 64, 64])).unwrap();
        assert_eq!(z.shape(), &[1, 4, 8, 8]);
        let sizes: Vec<_> = pyr.levels.iter().map(|t| t.shape()[2]).collect();
        assert_eq!(sizes, vec![32, 16, 8]);
    }

    #[test]
    fn encode_is_deterministic_and_checks_resolution() {
        let c = codec();
        assert_eq!(c.encode(&image(1)).unwrap(), c.encode(&image(1)).unwrap());
        assert!(matches!(c.encode(&Tensor::zeros(&[1, 1, 18, 16])), Err(Error::ResizeRequired { .. })));
    }

    #[test]
    fn fresh_decoder_ignores_hint_contents() {
        let c = codec();
        let (z, pp) = c.encode(&image(1)).unwrap();
        let (_, pn) = c.encode(&image(2)).unwrap();
        let q = c.quantize(&z, 0.25).unwrap();
        let empty = empty_hints::<f64>(16, 16, 2);
        let out = c.decode_with_hints(&q.z_q, &pp, &pn, &empty).unwrap();
        assert_eq!(out.shape(), &[1, 1, 16, 16]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let busy = MotionHints::new(
            Tensor::uniform(&[4, 16, 16], 3.0, &mut rng),
            Tensor::uniform(&[4, 16, 16], 3.0, &mut rng),
            HintSource::Simulator,
        )
        .unwrap();
        assert_eq!(out, c.decode_with_hints(&q.z_q, &pp, &pn, &busy).unwrap());
    }

    #[test]
    fn missing_pyramid_level_is_an_error() {
        let c = codec();
        let (z, mut pp) = c.encode(&image(1)).unwrap();
        pp.levels.pop();
        let q = c.quantize(&z, 0.25).unwrap();
        assert!(c.decode_with_hints(&q.z_q, &pp, &pp, &empty_hints(16, 16, 2)).is_err());
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let mut c = codec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<_> = c.store().ids().collect();
        for id in ids {
            let t = c.store_mut().get_mut(id);
            if t.max_abs() == 0.0 {
                *t = Tensor::uniform(t.shape(), 0.2, &mut rng);
            }
        }
        let (z, pp) = c.encode(&image(1)).unwrap();
        let (_, pn) = c.encode(&image(2)).unwrap();
        let mut inputs = vec![
            z,
            pp.levels[0].clone(),
            pn.levels[1].clone(),
            Tensor::uniform(&[1, 4, 16, 16], 1.0, &mut rng).map(f64::abs),
            Tensor::uniform(&[1, 4, 16, 16], 1.0, &mut rng).map(f64::abs),
        ];
        let weights = Tensor::randn(&[1, 1, 16, 16], &mut rng);
        let check = vfi_tensor::gradcheck::check_directional(
            &mut ParamStore::new(),
            &mut inputs,
            |g, _, x| {
                let phi_prev = [x[1], g.constant(pp.levels[1].clone())];
                let phi_next = [g.constant(pn.levels[0].clone()), x[2]];
                c.decode_graph(g, x[0], &phi_prev, &phi_next, x[3], x[4]).unwrap().mul(g.constant(weights.clone())).sum()
            },
            8,
            1e-6,
            &mut rng,
        );
        assert!(check.rel_err < 1e-4, "relative error {}", check.rel_err);
    }
}
