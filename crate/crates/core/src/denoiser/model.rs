use rand::Rng;
use vfi_tensor::nn::{Conv2d, GroupNorm, Linear};
use vfi_tensor::{Graph, ParamStore, Scalar, Tensor, Var};

use super::config::DenoiserConfig;
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::nets::{ResBlock, MAX_GROUPS};

/// Sinusoidal embedding of integer timesteps, `[N, dim]`.
pub fn timestep_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
        data.extend(args.iter().map(|a| S::of(a.sin())));
        data.extend(args.iter().map(|a| S::of(a.cos())));
    }
    Tensor::from_vec(&[ts.len(), dim], data).expect("embedding size")
}

#[derive(Debug, Clone)]
struct Attention {
    norm: GroupNorm,
    qkv: Conv2d,
    proj: Conv2d,
    heads: usize,
}

impl Attention {
    fn new<S: Scalar, R: Rng + ?Sized>(ps: &mut ParamStore<S>, name: &str, c: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm: GroupNorm::new(ps, &format!("{name}.norm"), c, MAX_GROUPS),
            qkv: Conv2d::new(ps, &format!("{name}.qkv"), c, 3 * c, 1, 1, 0, rng),
            proj: Conv2d::new(ps, &format!("{name}.proj"), c, c, 1, 1, 0, rng),
            heads,
        }
    }

    fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: Var<'g, S>) -> Var<'g, S> {
        let (n, c, h, w) = x.dims4();
        let dh = c / self.heads;
        let qkv = self.qkv.forward(g, ps, self.norm.forward(g, ps, x));
        let split = |i: usize| qkv.slice_channels(i * c, c).reshape(&[n * self.heads, dh, h * w]);
        let (q, k, v) = (split(0), split(1), split(2));
        let attn = q.bmm(k, true, false).scale(S::of(1.0 / (dh as f64).sqrt())).softmax_last();
        let out = v.bmm(attn, false, true).reshape(&[n, c, h, w]);
        x.add(self.proj.forward(g, ps, out))
    }
}

#[derive(Debug, Clone)]
struct Stage {
    res: ResBlock,
    attn: Option<Attention>,
}

/// Noise-prediction U-Net conditioned on neighbour latents and motion hints.
#[derive(Debug, Clone)]
pub struct Denoiser<S: Scalar> {
    config: DenoiserConfig,
    schedule: ScheduleSpec,
    /// Multiplier applied to codec latents before diffusion.
    pub latent_scale: f64,
    store: ParamStore<S>,
    conv_in: Conv2d,
    hint_in: Conv2d,
    hint_out: Conv2d,
    time1: Linear,
    time2: Linear,
    down: Vec<Stage>,
    downsample: Vec<Conv2d>,
    mid1: ResBlock,
    mid_attn: Attention,
    mid2: ResBlock,
    up: Vec<Stage>,
    upsample: Vec<Conv2d>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

/// Inference-time inputs; latents are `[N, D, h, w]`, hints `[N, 2B, H, W]`.
#[derive(Debug, Clone)]
pub struct DenoiseInput<S> {
    pub z_t: Tensor<S>,
    pub t: usize,
    pub z_prev: Tensor<S>,
    pub z_next: Tensor<S>,
    pub m_prev: Tensor<S>,
    pub m_next: Tensor<S>,
}

impl<S: Scalar> Denoiser<S> {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, schedule: ScheduleSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        schedule.build()?;
        let mut ps = ParamStore::new();
        let d = config.latent_channels;
        let w = |s: usize| config.width(s);
        let te = config.time_embed_dim;
        let attn_from = config.depth.saturating_sub(2);
        let stage = |ps: &mut ParamStore<S>, name: String, cin: usize, s: usize, rng: &mut R| Stage {
            res: ResBlock::new(ps, &format!("{name}.res"), cin, w(s), Some(te), rng),
            attn: (s >= attn_from).then(|| Attention::new(ps, &format!("{name}.attn"), w(s), config.attention_heads, rng)),
        };
        let conv_in = Conv2d::same3(&mut ps, "in", 3 * d, w(0), rng);
        let hint_in = Conv2d::same3(&mut ps, "hint.0", 2 * config.hint_channels(), w(0), rng);
        let hint_out = Conv2d::zeroed(&mut ps, "hint.1", w(0), w(0), 3, 1, 1);
        let time1 = Linear::new(&mut ps, "time.0", te, te, rng);
        let time2 = Linear::new(&mut ps, "time.1", te, te, rng);
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        for s in 0..config.depth {
            down.push(stage(&mut ps, format!("down{s}"), w(s), s, rng));
            if s + 1 < config.depth {
                downsample.push(Conv2d::new(&mut ps, &format!("down{s}.sample"), w(s), w(s + 1), 4, 2, 1, rng));
            }
        }
        let deep = w(config.depth - 1);
        let mid1 = ResBlock::new(&mut ps, "mid.res1", deep, deep, Some(te), rng);
        let mid_attn = Attention::new(&mut ps, "mid.attn", deep, config.attention_heads, rng);
        let mid2 = ResBlock::new(&mut ps, "mid.res2", deep, deep, Some(te), rng);
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for s in (0..config.depth).rev() {
            up.push(stage(&mut ps, format!("up{s}"), 2 * w(s), s, rng));
            if s > 0 {
                upsample.push(Conv2d::same3(&mut ps, &format!("up{s}.sample"), w(s), w(s - 1), rng));
            }
        }
        let out_norm = GroupNorm::new(&mut ps, "out.norm", w(0), MAX_GROUPS);
        let out_conv = Conv2d::zeroed(&mut ps, "out.conv", w(0), d, 3, 1, 1);
        Ok(Self {
            config,
            schedule,
            latent_scale: 1.0,
            store: ps,
            conv_in,
            hint_in,
            hint_out,
            time1,
            time2,
            down,
            downsample,
            mid1,
            mid_attn,
            mid2,
            up,
            upsample,
            out_norm,
            out_conv,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn schedule(&self) -> ScheduleSpec {
        self.schedule
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// `eps_hat` for a batch; `ts` holds one timestep per item.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_graph<'g>(
        &self,
        g: &'g Graph<S>,
        z_t: Var<'g, S>,
        ts: &[usize],
        z_prev: Var<'g, S>,
        z_next: Var<'g, S>,
        m_prev: Var<'g, S>,
        m_next: Var<'g, S>,
    ) -> Result<Var<'g, S>> {
        let (n, d, lh, lw) = z_t.dims4();
        if d != self.config.latent_channels {
            return Err(Error::Shape(format!("latent has {d} channels, denoiser expects {}", self.config.latent_channels)));
        }
        if z_prev.dims4() != (n, d, lh, lw) || z_next.dims4() != (n, d, lh, lw) {
            return Err(Error::Shape(format!(
                "conditioning latents {:?} / {:?} do not match {:?}",
                z_prev.shape(),
                z_next.shape(),
                z_t.shape()
            )));
        }
        self.config.check_latent(lh, lw)?;
        if ts.len() != n {
            return Err(Error::Shape(format!("{} timesteps for a batch of {n}", ts.len())));
        }
        for &t in ts {
            if t == 0 || t > self.schedule.steps {
                return Err(Error::Timestep { t, min: 1, max: self.schedule.steps });
            }
        }
        let ps = &self.store;
        let mut h = self.conv_in.forward(g, ps, Var::cat_channels(&[z_t, z_prev, z_next]));
        if self.config.use_hints {
            let (mn, mc, mh, mw) = m_prev.dims4();
            if m_next.dims4() != (mn, mc, mh, mw) || mn != n || mc != self.config.hint_channels() {
                return Err(Error::Shape(format!("hint batches {:?} / {:?}", m_prev.shape(), m_next.shape())));
            }
            let mode = crate::ma_warp::hint_resize_mode((mh, mw), (lh, lw));
            let m = Var::cat_channels(&[m_prev, m_next]).resize(lh, lw, mode);
            let a = self.hint_in.forward(g, ps, m).silu();
            h = h.add(self.hint_out.forward(g, ps, a));
        }
        let temb = g.constant(timestep_embedding(ts, self.config.time_embed_dim));
        let temb = self.time2.forward(g, ps, self.time1.forward(g, ps, temb).silu());
        let mut skips = Vec::with_capacity(self.config.depth);
        for (s, stage) in self.down.iter().enumerate() {
            h = stage.res.forward(g, ps, h, Some(temb));
            if let Some(a) = &stage.attn {
                h = a.forward(g, ps, h);
            }
            skips.push(h);
            if let Some(ds) = self.downsample.get(s) {
                h = ds.forward(g, ps, h);
            }
        }
        h = self.mid1.forward(g, ps, h, Some(temb));
        h = self.mid_attn.forward(g, ps, h);
        h = self.mid2.forward(g, ps, h, Some(temb));
        for (i, stage) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per stage");
            h = stage.res.forward(g, ps, Var::cat_channels(&[h, skip]), Some(temb));
            if let Some(a) = &stage.attn {
                h = a.forward(g, ps, h);
            }
            if let Some(us) = self.upsample.get(i) {
                h = us.forward(g, ps, h.upsample_nearest2x());
            }
        }
        let h = self.out_norm.forward(g, ps, h).silu();
        Ok(self.out_conv.forward(g, ps, h))
    }

    pub fn forward(&self, input: &DenoiseInput<S>) -> Result<Tensor<S>> {
        let g = Graph::inference();
        let n = input.z_t.dims4().0;
        let out = self.forward_graph(
            &g,
            g.constant(input.z_t.clone()),
            &vec![input.t; n],
            g.constant(input.z_prev.clone()),
            g.constant(input.z_next.clone()),
            g.constant(input.m_prev.clone()),
            g.constant(input.m_next.clone()),
        )?;
        Ok((*out.value()).clone())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            latent_channels: 2,
            base_width: 8,
            depth: 2,
            attention_heads: 2,
            time_embed_dim: 8,
            bins: 2,
            use_hints: true,
        }
    }

    fn input(seed: u64, t: usize) -> DenoiseInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenoiseInput {
            z_t: Tensor::randn(&[1, 2, 4, 4], &mut rng),
            t,
            z_prev: Tensor::randn(&[1, 2, 4, 4], &mut rng),
            z_next: Tensor::randn(&[1, 2, 4, 4], &mut rng),
            m_prev: Tensor::uniform(&[1, 4, 16, 16], 2.0, &mut rng),
            m_next: Tensor::uniform(&[1, 4, 16, 16], 2.0, &mut rng),
        }
    }

    #[test]
    fn output_shape_and_zero_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Denoiser::<f64>::new(tiny(), ScheduleSpec { steps: 50, ..ScheduleSpec::default() }, &mut rng).unwrap();
        let out = net.forward(&input(1, 10)).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4, 4]);
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_timesteps_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Denoiser::<f64>::new(tiny(), ScheduleSpec { steps: 50, ..ScheduleSpec::default() }, &mut rng).unwrap();
        assert!(matches!(net.forward(&input(1, 0)), Err(Error::Timestep { .. })));
        assert!(matches!(net.forward(&input(1, 51)), Err(Error::Timestep { .. })));
        let mut bad = input(1, 3);
        bad.z_prev = Tensor::zeros(&[1, 2, 2, 4]);
        assert!(net.forward(&bad).is_err());
        let mut odd = input(1, 3);
        odd.z_t = Tensor::zeros(&[1, 2, 3, 4]);
        odd.z_prev = odd.z_t.clone();
        odd.z_next = odd.z_t.clone();
        assert!(matches!(net.forward(&odd), Err(Error::ResizeRequired { .. })));
    }

    #[test]
    fn heads_must_divide_width() {
        let c = DenoiserConfig { attention_heads: 3, ..tiny() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn embedding_separates_timesteps() {
        let e = timestep_embedding::<f64>(&[1, 1000], 16);
        assert_ne!(e.data()[..16], e.data()[16..]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Denoiser::<f64>::new(tiny(), ScheduleSpec { steps: 50, ..ScheduleSpec::default() }, &mut rng).unwrap();
        let ids: Vec<_> = net.store().ids().collect();
        for id in ids {
            let t = net.store_mut().get_mut(id);
            if t.max_abs() == 0.0 {
                *t = Tensor::uniform(t.shape(), 0.2, &mut rng);
            }
        }
        let x = input(1, 7);
        let mut inputs = vec![x.z_t, x.z_prev, x.z_next, x.m_prev, x.m_next];
        let weights = Tensor::randn(&[1, 2, 4, 4], &mut rng);
        let check = vfi_tensor::gradcheck::check_directional(
            &mut ParamStore::new(),
            &mut inputs,
            |g, _, v| {
                net.forward_graph(g, v[0], &[7], v[1], v[2], v[3], v[4]).unwrap().mul(g.constant(weights.clone())).sum()
            },
            8,
            1e-6,
            &mut rng,
        );
        assert!(check.rel_err < 1e-4, "relative error {}", check.rel_err);
    }
}
