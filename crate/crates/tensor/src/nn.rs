//! Parameterized layers. Each layer only stores [`ParamId`]s; values live in
//! a [`ParamStore`] that is passed to `forward`.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Square-kernel 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight =
            store.fan_in_uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = Some(store.fan_in_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad }
    }

    /// "Same" 3x3 convolution.
    pub fn same3<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, in_channels, out_channels, 3, 1, 1, rng)
    }

    /// Convolution whose weight and bias start at exactly zero.
    #[allow(clippy::too_many_arguments)]
    pub fn zeroed<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel]);
        let bias = Some(store.zeros(format!("{name}.bias"), &[out_channels]));
        Self { weight, bias, in_channels, out_channels, kernel, stride, pad }
    }

    pub fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: Var<'g, S>) -> Var<'g, S> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        x.conv2d(w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.fan_in_uniform(format!("{name}.weight"), &[fan_out, fan_in], fan_in, rng);
        let bias = store.fan_in_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng);
        Self { weight, bias }
    }

    pub fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: Var<'g, S>) -> Var<'g, S> {
        x.linear(g.param(ps, self.weight), Some(g.param(ps, self.bias)))
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    /// Uses the largest group count `<= max_groups` that divides `channels`.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize, max_groups: usize) -> Self {
        let groups = (1..=max_groups.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1);
        let gamma = store.add(format!("{name}.gamma"), crate::Tensor::ones(&[channels]));
        let beta = store.zeros(format!("{name}.beta"), &[channels]);
        Self { gamma, beta, groups }
    }

    pub fn forward<'g, S: Scalar>(&self, g: &'g Graph<S>, ps: &ParamStore<S>, x: Var<'g, S>) -> Var<'g, S> {
        x.group_norm(self.groups, g.param(ps, self.gamma), g.param(ps, self.beta), 1e-5)
    }
}
