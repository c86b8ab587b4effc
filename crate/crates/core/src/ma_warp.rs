//! Motion-aware warp block: hint-driven offsets, backward warp, gated fusion.

use rand::Rng;
use vfi_tensor::nn::Conv2d;
use vfi_tensor::{Graph, ParamStore, ResizeMode, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::event_motion::MotionHints;

/// Area average when shrinking, bilinear when growing.
pub fn hint_resize_mode(from: (usize, usize), to: (usize, usize)) -> ResizeMode {
    if to.0 <= from.0 && to.1 <= from.1 {
        ResizeMode::Area
    } else {
        ResizeMode::Bilinear
    }
}

/// Resizes both hint volumes to `u x v`.
pub fn resize_hints<S: Scalar>(m: &MotionHints<S>, u: usize, v: usize) -> Result<(Tensor<S>, Tensor<S>)> {
    if u == 0 || v == 0 {
        return Err(Error::Shape(format!("cannot resize hints to {u}x{v}")));
    }
    let mode = hint_resize_mode((m.height(), m.width()), (u, v));
    let one = |t: &Tensor<S>| -> Result<Tensor<S>> {
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let batch = t.clone().reshape(&[1, c, h, w])?;
        Ok(vfi_tensor::ops::sample::resize(&batch, u, v, mode).reshape(&[c, u, v])?)
    };
    Ok((one(&m.forward)?, one(&m.backward)?))
}

fn resize_var<'g, S: Scalar>(m: Var<'g, S>, u: usize, v: usize) -> Var<'g, S> {
    let (_, _, h, w) = m.dims4();
    m.resize(u, v, hint_resize_mode((h, w), (u, v)))
}

/// Three-layer conv stack, SiLU between layers, zero-initialised last layer.
#[derive(Debug, Clone)]
struct SmallNet {
    layers: [Conv2d; 3],
}

impl SmallNet {
    fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            layers: [
                Conv2d::same3(ps, &format!("{name}.0"), cin, hidden, rng),
                Conv2d::same3(ps, &format!("{name}.1"), hidden, hidden, rng),
                Conv2d::zeroed(ps, &format!("{name}.2"), hidden, cout, 3, 1, 1),
            ],
        }
    }

    fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: Var<'g, S>) -> Var<'g, S> {
        let x = self.layers[0].forward(g, ps, x).silu();
        let x = self.layers[1].forward(g, ps, x).silu();
        self.layers[2].forward(g, ps, x)
    }
}

/// Inputs of one decoder layer; hints may be at any resolution.
#[derive(Clone, Copy)]
pub struct WarpInputs<'g, S: Scalar> {
    pub h: Var<'g, S>,
    pub phi_prev: Var<'g, S>,
    pub phi_next: Var<'g, S>,
    pub m_prev: Var<'g, S>,
    pub m_next: Var<'g, S>,
}

/// Fused feature plus the intermediate maps.
pub struct WarpOutputs<'g, S: Scalar> {
    pub fused: Var<'g, S>,
    pub offsets_prev: Var<'g, S>,
    pub offsets_next: Var<'g, S>,
    pub warped_prev: Var<'g, S>,
    pub warped_next: Var<'g, S>,
    pub gate: Var<'g, S>,
    pub residual: Var<'g, S>,
}

/// One MA-Warp block. Parameters live in the owning model's store.
#[derive(Debug, Clone)]
pub struct MaWarp {
    channels: usize,
    hint_channels: usize,
    offset_net: SmallNet,
    gate_net: SmallNet,
    residual_net: SmallNet,
}

impl MaWarp {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        hint_channels: usize,
        rng: &mut R,
    ) -> Self {
        let c = channels;
        Self {
            channels,
            hint_channels,
            offset_net: SmallNet::new(ps, &format!("{name}.offset"), 2 * c + hint_channels, c, 2, rng),
            gate_net: SmallNet::new(ps, &format!("{name}.gate"), 2 * c, c, 1, rng),
            residual_net: SmallNet::new(ps, &format!("{name}.residual"), c, c, c, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hint_channels(&self) -> usize {
        self.hint_channels
    }

    /// `[N, 2, U, V]` offsets `(dy, dx)` for sampling `phi` toward `h`.
    pub fn predict_offsets<'g, S: Scalar>(
        &self,
        g: &'g Graph<S>,
        ps: &ParamStore<S>,
        h: Var<'g, S>,
        m: Var<'g, S>,
        phi: Var<'g, S>,
    ) -> Var<'g, S> {
        self.offset_net.forward(g, ps, Var::cat_channels(&[h, m, phi]))
    }

    /// Occlusion gate in `[0, 1]`, `[N, 1, U, V]`.
    pub fn gate<'g, S: Scalar>(
        &self,
        g: &'g Graph<S>,
        ps: &ParamStore<S>,
        warped_prev: Var<'g, S>,
        warped_next: Var<'g, S>,
    ) -> Var<'g, S> {
        self.gate_net.forward(g, ps, Var::cat_channels(&[warped_prev, warped_next])).sigmoid()
    }

    pub fn residual<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, h: Var<'g, S>) -> Var<'g, S> {
        self.residual_net.forward(g, ps, h)
    }

    fn check<S: Scalar>(&self, x: &WarpInputs<'_, S>) -> Result<()> {
        let (n, c, u, v) = x.h.dims4();
        if c != self.channels {
            return Err(Error::Shape(format!("warp block expects {} channels, got {c}", self.channels)));
        }
        for (name, t) in [("phi_prev", x.phi_prev), ("phi_next", x.phi_next)] {
            if t.dims4() != (n, c, u, v) {
                return Err(Error::Shape(format!("{name} {:?} does not match h {:?}", t.shape(), x.h.shape())));
            }
        }
        for (name, t) in [("m_prev", x.m_prev), ("m_next", x.m_next)] {
            let (mn, mc, _, _) = t.dims4();
            if mn != n || mc != self.hint_channels {
                return Err(Error::Shape(format!(
                    "{name} {:?} needs batch {n} and {} channels",
                    t.shape(),
                    self.hint_channels
                )));
            }
        }
        Ok(())
    }

    pub fn forward_detailed<'g, S: Scalar>(
        &self,
        g: &'g Graph<S>,
        ps: &ParamStore<S>,
        x: WarpInputs<'g, S>,
    ) -> Result<WarpOutputs<'g, S>> {
        self.check(&x)?;
        let (_, _, u, v) = x.h.dims4();
        let m_prev = resize_var(x.m_prev, u, v);
        let m_next = resize_var(x.m_next, u, v);
        let offsets_prev = self.predict_offsets(g, ps, x.h, m_prev, x.phi_prev);
        let offsets_next = self.predict_offsets(g, ps, x.h, m_next, x.phi_next);
        let warped_prev = warp(offsets_prev, x.phi_prev)?;
        let warped_next = warp(offsets_next, x.phi_next)?;
        let gate = self.gate(g, ps, warped_prev, warped_next);
        let residual = self.residual(g, ps, x.h);
        let fused = fuse(gate, warped_prev, warped_next, residual);
        Ok(WarpOutputs { fused, offsets_prev, offsets_next, warped_prev, warped_next, gate, residual })
    }

    pub fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: WarpInputs<'g, S>) -> Result<Var<'g, S>> {
        Ok(self.forward_detailed(g, ps, x)?.fused)
    }
}

/// Border-clamped bilinear backward warp of `phi` by `offsets`.
pub fn warp<'g, S: Scalar>(offsets: Var<'g, S>, phi: Var<'g, S>) -> Result<Var<'g, S>> {
    let (n, c2, u, v) = offsets.dims4();
    let (pn, _, pu, pv) = phi.dims4();
    if c2 != 2 || (n, u, v) != (pn, pu, pv) {
        return Err(Error::Shape(format!("offsets {:?} do not fit features {:?}", offsets.shape(), phi.shape())));
    }
    if !offsets.value().all_finite() {
        return Err(Error::NonFinite { what: "warp offsets".into(), step: 0, detail: "offset map".into() });
    }
    Ok(phi.warp(offsets))
}

/// `g * warped_prev + (1 - g) * warped_next + delta`, with `g` a one-channel map.
pub fn fuse<'g, S: Scalar>(gate: Var<'g, S>, warped_prev: Var<'g, S>, warped_next: Var<'g, S>, delta: Var<'g, S>) -> Var<'g, S> {
    warped_prev.mul_map(gate).add(warped_next.mul_map(gate.one_minus())).add(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, h, w], (0..h * w).map(|i| (i % w) as f64).collect()).unwrap()
    }

    fn const_offsets(h: usize, w: usize, dy: f64, dx: f64) -> Tensor<f64> {
        let mut d = vec![dy; h * w];
        d.extend(vec![dx; h * w]);
        Tensor::from_vec(&[1, 2, h, w], d).unwrap()
    }

    #[test]
    fn zero_offsets_are_identity() {
        let g = Graph::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = g.constant(Tensor::randn(&[2, 3, 5, 6], &mut rng));
        let out = warp(g.constant(Tensor::zeros(&[2, 2, 5, 6])), phi).unwrap();
        assert_eq!(out.value().data(), phi.value().data());
    }

    #[test]
    fn integer_and_half_shifts() {
        let g = Graph::<f64>::inference();
        let phi = g.constant(ramp(3, 5));
        let out = warp(g.constant(const_offsets(3, 5, 0.0, 1.0)), phi).unwrap().value();
        for x in 0..5 {
            assert_eq!(out.at4(0, 0, 1, x), ((x + 1).min(4)) as f64);
        }
        let out = warp(g.constant(const_offsets(3, 5, 0.0, 0.5)), phi).unwrap().value();
        for x in 0..4 {
            assert!((out.at4(0, 0, 2, x) - (x as f64 + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_offsets() {
        let g = Graph::<f64>::inference();
        let phi = g.constant(ramp(2, 2));
        let off = g.constant(const_offsets(2, 2, f64::NAN, 0.0));
        assert!(warp(off, phi).is_err());
    }

    #[test]
    fn fuse_with_forced_maps() {
        let g = Graph::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(&[1, 4, 3, 3], &mut rng);
        let b = Tensor::randn(&[1, 4, 3, 3], &mut rng);
        let zero = g.constant(Tensor::zeros(&[1, 4, 3, 3]));
        let out = fuse(g.constant(Tensor::ones(&[1, 1, 3, 3])), g.constant(a.clone()), g.constant(b.clone()), zero);
        assert_eq!(out.value().data(), a.data());
        let neg = a.scale(-1.0);
        let half = g.constant(Tensor::full(&[1, 1, 3, 3], 0.5));
        let out = fuse(half, g.constant(a.clone()), g.constant(neg), zero);
        assert_eq!(out.value().max_abs(), 0.0);
        let out = fuse(half, g.constant(a.clone()), g.constant(b.clone()), zero);
        let mean = a.zip_map(&b, |x, y| 0.5 * (x + y));
        assert!(out.value().max_abs_diff(&mean) < 1e-15);
    }

    #[test]
    fn fresh_block_averages_unshifted_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::<f64>::new();
        let block = MaWarp::new(&mut ps, "w", 4, 6, &mut rng);
        let g = Graph::inference();
        let h = g.constant(Tensor::randn(&[1, 4, 4, 4], &mut rng));
        let pp = Tensor::randn(&[1, 4, 4, 4], &mut rng);
        let pn = Tensor::randn(&[1, 4, 4, 4], &mut rng);
        let m = g.constant(Tensor::uniform(&[1, 6, 8, 8], 1.0, &mut rng));
        let inputs = WarpInputs { h, phi_prev: g.constant(pp.clone()), phi_next: g.constant(pn.clone()), m_prev: m, m_next: m };
        let out = block.forward_detailed(&g, &ps, inputs).unwrap();
        assert_eq!(out.offsets_prev.value().max_abs(), 0.0);
        assert_eq!(out.offsets_prev.shape(), vec![1, 2, 4, 4]);
        assert!(out.gate.value().data().iter().all(|&v| v == 0.5));
        let mean = pp.zip_map(&pn, |x, y| 0.5 * (x + y));
        assert!(out.fused.value().max_abs_diff(&mean) < 1e-15);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f64>::new();
        let block = MaWarp::new(&mut ps, "w", 4, 6, &mut rng);
        let g = Graph::inference();
        let h = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let m = g.constant(Tensor::zeros(&[1, 6, 4, 4]));
        let inputs = WarpInputs { h, phi_prev: h, phi_next: h, m_prev: m, m_next: m };
        assert!(block.forward(&g, &ps, inputs).is_err());
    }

    #[test]
    fn resize_hints_contract() {
        let f = Tensor::from_vec(&[2, 2, 2], vec![0.0, 2.0, 4.0, 6.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = MotionHints::new(f.clone(), f, crate::event_motion::HintSource::Simulator).unwrap();
        let (a, _) = resize_hints(&m, 1, 1).unwrap();
        assert_eq!(a.data(), &[3.0, 1.0]);
        let (same, _) = resize_hints(&m, 2, 2).unwrap();
        assert_eq!(same, m.forward);
    }
}
