use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfi_tensor::{Scalar, Tensor};

use super::manifest::{
    image_digest, params_digest, BackendEcho, HintMode, HintTraceEntry, SampleManifest, SamplerKind, MANIFEST_VERSION,
};
use crate::codec::{Codec, FeaturePyramid};
use crate::denoiser::{DenoiseInput, Denoiser};
use crate::diffusion::{ddim_step, ddim_timesteps, ddpm_step, predict_z0, NoiseSchedule};
use crate::error::{Error, Result};
use crate::event_motion::{empty_hints, extract_motion_hints, global_hints, HintBackend, MotionHints};
use crate::image::Image;

/// A trained codec and denoiser pair.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a, S: Scalar> {
    pub codec: &'a Codec<S>,
    pub denoiser: &'a Denoiser<S>,
}

impl<'a, S: Scalar> Models<'a, S> {
    pub fn new(codec: &'a Codec<S>, denoiser: &'a Denoiser<S>) -> Result<Self> {
        let (c, d) = (codec.config(), denoiser.config());
        if c.embed_dim != d.latent_channels || c.bins != d.bins {
            return Err(Error::Config(format!(
                "codec (embed_dim {}, bins {}) and denoiser (latent_channels {}, bins {}) disagree",
                c.embed_dim, c.bins, d.latent_channels, d.bins
            )));
        }
        Ok(Self { codec, denoiser })
    }

    fn bins(&self) -> usize {
        self.codec.config().bins
    }
}

/// Result of one sampling run.
#[derive(Debug, Clone)]
pub struct SampleOutput<S> {
    pub image: Image<S>,
    /// `z_hat_t` after every update, in sampling order.
    pub trajectory: Vec<Tensor<S>>,
    /// Final latent handed to the decoder (scaled to codec units).
    pub latent: Tensor<S>,
    pub manifest: SampleManifest,
}

/// Conditioning shared by every step.
struct Context<S: Scalar> {
    z_prev: Tensor<S>,
    z_next: Tensor<S>,
    phi_prev: FeaturePyramid<S>,
    phi_next: FeaturePyramid<S>,
    shape: Vec<usize>,
    scale: f64,
    schedule: NoiseSchedule,
}

impl<S: Scalar> Context<S> {
    fn new(models: &Models<'_, S>, prev: &Image<S>, next: &Image<S>) -> Result<Self> {
        prev.same_shape(next)?;
        let codec = models.codec;
        let (zp, pp) = codec.encode(&prev.to_batch())?;
        let (zn, pn) = codec.encode(&next.to_batch())?;
        let scale = models.denoiser.latent_scale;
        let s = S::of(scale);
        let z_prev = codec.quantize(&zp, 0.0)?.z_q.scale(s);
        let z_next = codec.quantize(&zn, 0.0)?.z_q.scale(s);
        let shape = z_prev.shape().to_vec();
        Ok(Self { z_prev, z_next, phi_prev: pp, phi_next: pn, shape, scale, schedule: models.denoiser.schedule().build()? })
    }

    fn eps(&self, models: &Models<'_, S>, z: &Tensor<S>, t: usize, hints: &MotionHints<S>) -> Result<Tensor<S>> {
        let (m_prev, m_next) = MotionHints::stack(&[hints])?;
        models.denoiser.forward(&DenoiseInput {
            z_t: z.clone(),
            t,
            z_prev: self.z_prev.clone(),
            z_next: self.z_next.clone(),
            m_prev,
            m_next,
        })
    }

    /// Back to codec units.
    fn unscale(&self, z: &Tensor<S>) -> Tensor<S> {
        z.scale(S::of(1.0 / self.scale))
    }

    fn decode(&self, models: &Models<'_, S>, z: &Tensor<S>, hints: &MotionHints<S>) -> Result<Image<S>> {
        let out = models.codec.decode_latent(&self.unscale(z), &self.phi_prev, &self.phi_next, hints)?;
        Ok(Image::from_batch(&out, 0))
    }
}

fn timesteps(kind: SamplerKind, schedule: &NoiseSchedule, steps: usize) -> Result<Vec<usize>> {
    if kind.is_ddim() {
        ddim_timesteps(schedule.steps(), steps)
    } else {
        Ok((1..=schedule.steps()).rev().collect())
    }
}

#[allow(clippy::too_many_arguments)]
fn manifest<S: Scalar>(
    models: &Models<'_, S>,
    kind: SamplerKind,
    backend: &HintBackend<S>,
    mode: HintMode,
    steps: usize,
    seed: u64,
    ts: Vec<usize>,
    decoder_calls: usize,
    hint_trace: Vec<HintTraceEntry>,
    image: &Image<S>,
) -> SampleManifest {
    SampleManifest {
        version: MANIFEST_VERSION,
        seed,
        schedule: models.denoiser.schedule(),
        sampler: kind,
        hint_backend: BackendEcho::of(backend),
        hint_mode: mode,
        steps,
        timesteps: ts,
        latent_scale: models.denoiser.latent_scale,
        decoder_calls,
        hint_trace,
        codec_digest: params_digest(models.codec.store()),
        denoiser_digest: params_digest(models.denoiser.store()),
        output_digest: image_digest(image),
    }
}

/// Conditional reverse loop with empty hints throughout.
///
/// `steps` is the DDIM step count and is ignored by the DDPM kind.
pub fn sample_baseline<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    kind: SamplerKind,
    steps: usize,
    seed: u64,
) -> Result<SampleOutput<S>> {
    if kind.is_motion_aware() {
        return Err(Error::InvalidArgument(format!("{kind} is not a baseline sampler")));
    }
    let ctx = Context::new(models, prev, next)?;
    let ts = timesteps(kind, &ctx.schedule, steps)?;
    let empty = empty_hints(prev.height(), prev.width(), models.bins());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::randn(&ctx.shape, &mut rng);
    let mut trajectory = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let eps = ctx.eps(models, &z, t, &empty)?;
        z = if kind.is_ddim() {
            ddim_step(&z, t, ts.get(i + 1).copied().unwrap_or(0), &eps, &ctx.schedule)?
        } else {
            let noise = if t > 1 { Tensor::randn(&ctx.shape, &mut rng) } else { Tensor::zeros(&ctx.shape) };
            ddpm_step(&z, t, &eps, &noise, &ctx.schedule)?
        };
        check_finite(&z, t)?;
        trajectory.push(z.clone());
    }
    let image = ctx.decode(models, &z, &empty)?;
    let trace = ts.iter().map(|&t| HintTraceEntry { t, used_mass: 0.0, extracted_mass: None }).collect();
    let steps_echo = if kind.is_ddim() { steps } else { ctx.schedule.steps() };
    let backend = HintBackend::Empty { bins: models.bins() };
    let manifest = manifest(models, kind, &backend, HintMode::Dynamic, steps_echo, seed, ts, 1, trace, &image);
    Ok(SampleOutput { image, latent: ctx.unscale(&z), trajectory, manifest })
}

fn check_finite<S: Scalar>(z: &Tensor<S>, t: usize) -> Result<()> {
    if !z.all_finite() {
        return Err(Error::NonFinite { what: "latent".into(), step: t, detail: "sampling diverged".into() });
    }
    Ok(())
}

/// Motion-aware reverse loop shared by the DDPM and DDIM variants.
#[allow(clippy::too_many_arguments)]
fn ma_loop<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    kind: SamplerKind,
    steps: usize,
    backend: &HintBackend<S>,
    mode: HintMode,
    seed: u64,
) -> Result<SampleOutput<S>> {
    if backend.bins() != models.bins() {
        return Err(Error::Config(format!("backend emits {} bins, models expect {}", backend.bins(), models.bins())));
    }
    let ctx = Context::new(models, prev, next)?;
    let ts = timesteps(kind, &ctx.schedule, steps)?;
    let mut hints = match mode {
        HintMode::Dynamic => empty_hints(prev.height(), prev.width(), models.bins()),
        HintMode::Global => global_hints(prev, next, backend).map_err(|e| Error::HintBackend { step: ts[0], source: Box::new(e) })?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::randn(&ctx.shape, &mut rng);
    let mut trajectory = Vec::with_capacity(ts.len());
    let mut trace = Vec::with_capacity(ts.len());
    let mut decoder_calls = 0;
    let mut z0 = z.clone();
    for (i, &t) in ts.iter().enumerate() {
        let eps = ctx.eps(models, &z, t, &hints)?;
        z0 = predict_z0(&z, t, &eps, &ctx.schedule)?;
        let used_mass = hints.mass();
        let mut extracted_mass = None;
        if mode == HintMode::Dynamic {
            let estimate = ctx.decode(models, &z0, &hints)?;
            decoder_calls += 1;
            let fresh = extract_motion_hints(prev, &estimate, next, backend)
                .map_err(|e| Error::HintBackend { step: t, source: Box::new(e) })?;
            extracted_mass = Some(fresh.mass());
            hints = fresh;
        }
        trace.push(HintTraceEntry { t, used_mass, extracted_mass });
        z = if kind.is_ddim() {
            ddim_step(&z, t, ts.get(i + 1).copied().unwrap_or(0), &eps, &ctx.schedule)?
        } else {
            let noise = if t > 1 { Tensor::randn(&ctx.shape, &mut rng) } else { Tensor::zeros(&ctx.shape) };
            ddpm_step(&z, t, &eps, &noise, &ctx.schedule)?
        };
        check_finite(&z, t)?;
        trajectory.push(z.clone());
    }
    let image = ctx.decode(models, &z0, &hints)?;
    decoder_calls += 1;
    let steps_echo = if kind.is_ddim() { steps } else { ctx.schedule.steps() };
    let manifest = manifest(models, kind, backend, mode, steps_echo, seed, ts, decoder_calls, trace, &image);
    Ok(SampleOutput { image, latent: ctx.unscale(&z0), trajectory, manifest })
}

/// Ancestral motion-aware sampling over every timestep.
pub fn ma_sample<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    backend: &HintBackend<S>,
    seed: u64,
) -> Result<SampleOutput<S>> {
    ma_loop(prev, next, models, SamplerKind::MaDdpm, 0, backend, HintMode::Dynamic, seed)
}

/// Deterministic motion-aware sampling over `steps` strided timesteps.
pub fn ma_sample_ddim<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    steps: usize,
    backend: &HintBackend<S>,
    seed: u64,
) -> Result<SampleOutput<S>> {
    ma_loop(prev, next, models, SamplerKind::MaDdim, steps, backend, HintMode::Dynamic, seed)
}

/// Any sampler kind; `backend` and `mode` only affect motion-aware kinds.
#[allow(clippy::too_many_arguments)]
pub fn sample<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    kind: SamplerKind,
    steps: usize,
    backend: &HintBackend<S>,
    mode: HintMode,
    seed: u64,
) -> Result<SampleOutput<S>> {
    if kind.is_motion_aware() {
        ma_loop(prev, next, models, kind, steps, backend, mode, seed)
    } else {
        sample_baseline(prev, next, models, kind, steps, seed)
    }
}

/// Re-runs a manifest; fails unless the output digest matches.
pub fn replay<S: Scalar>(
    manifest: &SampleManifest,
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    backend: &HintBackend<S>,
) -> Result<SampleOutput<S>> {
    if models.denoiser.schedule() != manifest.schedule {
        return Err(Error::Config("manifest schedule differs from the denoiser's".into()));
    }
    if params_digest(models.codec.store()) != manifest.codec_digest
        || params_digest(models.denoiser.store()) != manifest.denoiser_digest
    {
        return Err(Error::Config("manifest was produced by different model parameters".into()));
    }
    if manifest.sampler.is_motion_aware() && BackendEcho::of(backend) != manifest.hint_backend {
        return Err(Error::Config("manifest hint backend differs from the one supplied".into()));
    }
    let out = sample(prev, next, models, manifest.sampler, manifest.steps, backend, manifest.hint_mode, manifest.seed)?;
    if out.manifest.output_digest != manifest.output_digest {
        return Err(Error::Checkpoint(format!(
            "replay produced {} instead of {}",
            out.manifest.output_digest, manifest.output_digest
        )));
    }
    Ok(out)
}

/// Baseline sample, then a second decode of the same latent with hints
/// extracted from the first decode.
pub fn sample_refine_decode<S: Scalar>(
    prev: &Image<S>,
    next: &Image<S>,
    models: &Models<'_, S>,
    kind: SamplerKind,
    steps: usize,
    backend: &HintBackend<S>,
    seed: u64,
) -> Result<SampleOutput<S>> {
    let mut out = sample_baseline(prev, next, models, kind, steps, seed)?;
    let hints = extract_motion_hints(prev, &out.image, next, backend)
        .map_err(|e| Error::HintBackend { step: 0, source: Box::new(e) })?;
    let (_, pp) = models.codec.encode(&prev.to_batch())?;
    let (_, pn) = models.codec.encode(&next.to_batch())?;
    let decoded = models.codec.decode_latent(&out.latent, &pp, &pn, &hints)?;
    out.image = Image::from_batch(&decoded, 0);
    out.manifest.hint_backend = BackendEcho::of(backend);
    out.manifest.decoder_calls += 1;
    out.manifest.output_digest = image_digest(&out.image);
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::ScheduleSpec;
    use rand::Rng;

    pub(crate) fn toy_models(seed: u64, hint_adapters_zero: bool) -> (Codec<f64>, Denoiser<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codec = Codec::new(
            CodecConfig {
                image_channels: 1,
                factor: 4,
                pyramid_levels: 2,
                codebook_size: 16,
                embed_dim: 4,
                base_width: 8,
                bins: 2,
                use_hints: true,
            },
            &mut rng,
        )
        .unwrap();
        let mut denoiser = Denoiser::new(
            DenoiserConfig {
                latent_channels: 4,
                base_width: 8,
                depth: 2,
                attention_heads: 2,
                time_embed_dim: 8,
                bins: 2,
                use_hints: true,
            },
            ScheduleSpec { steps: 40, beta_start: 1e-4, beta_end: 2e-2 },
            &mut rng,
        )
        .unwrap();
        // Wake the zero-initialized output head so the loop does real work.
        let ids: Vec<_> = denoiser.store().ids().collect();
        for id in ids {
            let name = denoiser.store().name(id).to_string();
            if hint_adapters_zero && name.contains("hint") {
                continue;
            }
            let t = denoiser.store_mut().get_mut(id);
            if t.max_abs() == 0.0 {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.05..0.05);
                }
            }
        }
        (codec, denoiser)
    }

    pub(crate) fn frames(v: f64) -> (Image<f64>, Image<f64>) {
        let mk = |shift: f64| {
            let mut im = Image::filled(1, 16, 16, 0.2);
            for y in 0..16 {
                for x in 0..16 {
                    let d = ((x as f64 - 8.0 - shift).powi(2) + (y as f64 - 8.0).powi(2)).sqrt();
                    if d < 4.0 {
                        im.set(0, y, x, 0.9);
                    }
                }
            }
            im
        };
        (mk(-v / 2.0), mk(v / 2.0))
    }

    #[test]
    fn baseline_ddim_is_deterministic_and_shaped() {
        let (c, d) = toy_models(1, true);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(4.0);
        let a = sample_baseline(&p, &n, &m, SamplerKind::BaselineDdim, 5, 3).unwrap();
        let b = sample_baseline(&p, &n, &m, SamplerKind::BaselineDdim, 5, 3).unwrap();
        assert_eq!(a.image.dims(), p.dims());
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.manifest.decoder_calls, 1);
        assert_eq!(a.manifest.timesteps, vec![40, 32, 24, 16, 8]);
        let c3 = sample_baseline(&p, &n, &m, SamplerKind::BaselineDdim, 5, 4).unwrap();
        assert_ne!(a.image.data(), c3.image.data());
    }

    #[test]
    fn zero_hint_equivalence() {
        let (c, d) = toy_models(2, true);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(6.0);
        let base = sample_baseline(&p, &n, &m, SamplerKind::BaselineDdim, 8, 11).unwrap();
        let ma = ma_sample_ddim(&p, &n, &m, 8, &HintBackend::Empty { bins: 2 }, 11).unwrap();
        assert_eq!(base.trajectory.len(), 8);
        for (a, b) in base.trajectory.iter().zip(&ma.trajectory) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
        // Simulator hints differ from empty hints once adapters are live.
        let (c, d) = toy_models(2, false);
        let m = Models::new(&c, &d).unwrap();
        let base = sample_baseline(&p, &n, &m, SamplerKind::BaselineDdim, 8, 11).unwrap();
        let ma = ma_sample_ddim(&p, &n, &m, 8, &HintBackend::simulator(0.1, 2), 11).unwrap();
        assert!(base.trajectory[7].max_abs_diff(&ma.trajectory[7]) > 0.0);
    }

    #[test]
    fn ma_ddim_counts_and_trace() {
        let (c, d) = toy_models(3, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(6.0);
        let out = ma_sample_ddim(&p, &n, &m, 8, &HintBackend::simulator(0.1, 2), 5).unwrap();
        assert_eq!(out.manifest.decoder_calls, 9);
        let trace = &out.manifest.hint_trace;
        assert_eq!(trace.len(), 8);
        assert_eq!(trace[0].used_mass, 0.0);
        for w in trace.windows(2) {
            assert_eq!(Some(w[1].used_mass), w[0].extracted_mass);
        }
        assert!(trace.iter().all(|e| e.used_mass.is_finite() && e.used_mass >= 0.0));
        let again = ma_sample_ddim(&p, &n, &m, 8, &HintBackend::simulator(0.1, 2), 5).unwrap();
        assert_eq!(out.image.data(), again.image.data());
    }

    #[test]
    fn full_ddim_matches_every_timestep() {
        let (c, d) = toy_models(4, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(2.0);
        let out = ma_sample_ddim(&p, &n, &m, 40, &HintBackend::simulator(0.1, 2), 0).unwrap();
        assert_eq!(out.manifest.timesteps, (1..=40).rev().collect::<Vec<_>>());
        assert_eq!(out.manifest.decoder_calls, 41);
    }

    #[test]
    fn ma_ddpm_runs_all_steps() {
        let (c, d) = toy_models(5, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(2.0);
        let out = ma_sample(&p, &n, &m, &HintBackend::simulator(0.1, 2), 9).unwrap();
        assert_eq!(out.manifest.decoder_calls, 41);
        assert_eq!(out.manifest.steps, 40);
        let again = ma_sample(&p, &n, &m, &HintBackend::simulator(0.1, 2), 9).unwrap();
        assert_eq!(out.image.data(), again.image.data());
    }

    #[test]
    fn global_mode_holds_hints() {
        let (c, d) = toy_models(6, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(6.0);
        let backend = HintBackend::simulator(0.1, 2);
        let out = sample(&p, &n, &m, SamplerKind::MaDdim, 4, &backend, HintMode::Global, 1).unwrap();
        let mass = out.manifest.hint_trace[0].used_mass;
        assert!(mass > 0.0);
        assert!(out.manifest.hint_trace.iter().all(|e| e.used_mass == mass && e.extracted_mass.is_none()));
        assert_eq!(out.manifest.decoder_calls, 1);
    }

    #[test]
    fn replay_reproduces_and_detects_tampering() {
        let (c, d) = toy_models(7, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(4.0);
        let backend = HintBackend::simulator(0.1, 2);
        let out = ma_sample_ddim(&p, &n, &m, 6, &backend, 21).unwrap();
        let manifest = SampleManifest::from_json(&out.manifest.to_json().unwrap()).unwrap();
        let again = replay(&manifest, &p, &n, &m, &backend).unwrap();
        assert_eq!(again.image.data(), out.image.data());
        let mut bad = manifest.clone();
        bad.seed += 1;
        assert!(matches!(replay(&bad, &p, &n, &m, &backend), Err(Error::Checkpoint(_))));
        assert!(replay(&manifest, &p, &n, &m, &HintBackend::flow(2)).is_err());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (c, d) = toy_models(8, true);
        let m = Models::new(&c, &d).unwrap();
        let (p, _) = frames(0.0);
        let odd = Image::filled(1, 18, 18, 0.5);
        assert!(sample_baseline(&p, &odd, &m, SamplerKind::BaselineDdim, 2, 0).is_err());
        assert!(sample_baseline(&odd, &odd, &m, SamplerKind::BaselineDdim, 2, 0).unwrap_err().is_config());
        assert!(ma_sample_ddim(&p, &p, &m, 2, &HintBackend::simulator(0.1, 3), 0).is_err());
        assert!(sample_baseline(&p, &p, &m, SamplerKind::MaDdim, 2, 0).is_err());
    }

    #[test]
    fn refine_decode_adds_one_decode() {
        let (c, d) = toy_models(9, false);
        let m = Models::new(&c, &d).unwrap();
        let (p, n) = frames(6.0);
        let out = sample_refine_decode(&p, &n, &m, SamplerKind::BaselineDdim, 4, &HintBackend::simulator(0.1, 2), 2)
            .unwrap();
        assert_eq!(out.manifest.decoder_calls, 2);
        assert_eq!(out.image.dims(), p.dims());
    }
}
