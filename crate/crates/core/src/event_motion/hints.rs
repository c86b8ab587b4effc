use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use vfi_tensor::{Scalar, Tensor};

use super::flow::{flow_volume, DEFAULT_BLOCK, DEFAULT_RADIUS};
use super::learned::LearnedI2e;
use super::simulator::simulate_volume;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintSource {
    Simulator,
    #[serde(alias = "learned")]
    LearnedI2e,
    Flow,
    Empty,
}

impl HintSource {
    pub fn name(self) -> &'static str {
        match self {
            HintSource::Simulator => "simulator",
            HintSource::LearnedI2e => "learned",
            HintSource::Flow => "flow",
            HintSource::Empty => "empty",
        }
    }
}

impl fmt::Display for HintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HintSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulator" => Ok(HintSource::Simulator),
            "learned" | "learned_i2e" => Ok(HintSource::LearnedI2e),
            "flow" => Ok(HintSource::Flow),
            "empty" => Ok(HintSource::Empty),
            other => Err(Error::Config(format!("unknown hint backend {other:?}"))),
        }
    }
}

/// Hint pair `(m_{-1->0}, m_{0->+1})`, each `[2B, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionHints<S> {
    pub forward: Tensor<S>,
    pub backward: Tensor<S>,
    pub source: HintSource,
}

impl<S: Scalar> MotionHints<S> {
    pub fn new(forward: Tensor<S>, backward: Tensor<S>, source: HintSource) -> Result<Self> {
        if forward.shape() != backward.shape() || forward.shape().len() != 3 || forward.shape()[0] % 2 != 0 {
            return Err(Error::Shape(format!("hint volumes {:?} / {:?}", forward.shape(), backward.shape())));
        }
        Ok(Self { forward, backward, source })
    }

    pub fn bins(&self) -> usize {
        self.forward.shape()[0] / 2
    }

    pub fn height(&self) -> usize {
        self.forward.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.forward.shape()[2]
    }

    /// Sum of absolute entries over both volumes.
    pub fn mass(&self) -> f64 {
        self.forward.data().iter().chain(self.backward.data()).map(|v| v.abs().as_f64()).sum()
    }

    /// Stacks hint pairs into `[N, 2B, H, W]` forward and backward batches.
    pub fn stack(items: &[&MotionHints<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
        let first = items.first().ok_or_else(|| Error::Shape("no hints to stack".into()))?;
        let s = first.forward.shape().to_vec();
        let mut fwd = Vec::with_capacity(items.len() * first.forward.numel());
        let mut bwd = Vec::with_capacity(fwd.capacity());
        for m in items {
            if m.forward.shape() != s.as_slice() {
                return Err(Error::Shape(format!("cannot stack hints {:?} with {s:?}", m.forward.shape())));
            }
            fwd.extend_from_slice(m.forward.data());
            bwd.extend_from_slice(m.backward.data());
        }
        let shape = [items.len(), s[0], s[1], s[2]];
        Ok((Tensor::from_vec(&shape, fwd)?, Tensor::from_vec(&shape, bwd)?))
    }
}

/// All-zero hints.
pub fn empty_hints<S: Scalar>(height: usize, width: usize, bins: usize) -> MotionHints<S> {
    let z = Tensor::zeros(&[2 * bins, height, width]);
    MotionHints { forward: z.clone(), backward: z, source: HintSource::Empty }
}

/// Pluggable pairwise motion extractor.
#[derive(Debug, Clone)]
pub enum HintBackend<S: Scalar> {
    Simulator { threshold: f64, bins: usize },
    Learned(Arc<LearnedI2e<S>>),
    Flow { bins: usize, block: usize, radius: usize },
    Empty { bins: usize },
}

impl<S: Scalar> HintBackend<S> {
    pub fn simulator(threshold: f64, bins: usize) -> Self {
        HintBackend::Simulator { threshold, bins }
    }

    pub fn flow(bins: usize) -> Self {
        HintBackend::Flow { bins, block: DEFAULT_BLOCK, radius: DEFAULT_RADIUS }
    }

    pub fn source(&self) -> HintSource {
        match self {
            HintBackend::Simulator { .. } => HintSource::Simulator,
            HintBackend::Learned(_) => HintSource::LearnedI2e,
            HintBackend::Flow { .. } => HintSource::Flow,
            HintBackend::Empty { .. } => HintSource::Empty,
        }
    }

    pub fn bins(&self) -> usize {
        match self {
            HintBackend::Simulator { bins, .. } | HintBackend::Flow { bins, .. } | HintBackend::Empty { bins } => *bins,
            HintBackend::Learned(net) => net.config().bins,
        }
    }

    /// Motion volume from `a` to `b`, `[2B, H, W]`.
    pub fn pair(&self, a: &Image<S>, b: &Image<S>) -> Result<Tensor<S>> {
        a.same_shape(b)?;
        match self {
            HintBackend::Simulator { threshold, bins } => Ok(simulate_volume(a, b, *threshold, *bins)?.into_tensor()),
            HintBackend::Learned(net) => net.predict(a, b),
            HintBackend::Flow { bins, block, radius } => flow_volume(a, b, *bins, *block, *radius),
            HintBackend::Empty { bins } => Ok(Tensor::zeros(&[2 * bins, a.height(), a.width()])),
        }
    }
}

/// `forward = backend(prev, mid)`, `backward = backend(mid, next)`.
pub fn extract_motion_hints<S: Scalar>(
    prev: &Image<S>,
    mid: &Image<S>,
    next: &Image<S>,
    backend: &HintBackend<S>,
) -> Result<MotionHints<S>> {
    prev.same_shape(mid)?;
    mid.same_shape(next)?;
    MotionHints::new(backend.pair(prev, mid)?, backend.pair(mid, next)?, backend.source())
}

/// Hints from the outer pair alone, placed in both slots.
pub fn global_hints<S: Scalar>(prev: &Image<S>, next: &Image<S>, backend: &HintBackend<S>) -> Result<MotionHints<S>> {
    let m = backend.pair(prev, next)?;
    MotionHints::new(m.clone(), m, backend.source())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(x0: usize) -> Image<f64> {
        let mut im = Image::filled(1, 16, 16, 0.2);
        for y in 4..12 {
            for x in x0..x0 + 4 {
                im.set(0, y, x, 0.8);
            }
        }
        im
    }

    #[test]
    fn static_scene_gives_zero_hints() {
        let f = bar(5);
        let m = extract_motion_hints(&f, &f, &f, &HintBackend::simulator(0.1, 9)).unwrap();
        assert_eq!(m.mass(), 0.0);
        assert_eq!(m.source, HintSource::Simulator);
    }

    #[test]
    fn moving_bar_fires_on_edges_only() {
        let (p, m, n) = (bar(2), bar(4), bar(6));
        let hints = extract_motion_hints(&p, &m, &n, &HintBackend::simulator(0.1, 9)).unwrap();
        for (vol, a, b) in [(&hints.forward, &p, &m), (&hints.backward, &m, &n)] {
            assert!(vol.sum() > 0.0);
            let plane = 16 * 16;
            for c in 0..18 {
                for i in 0..plane {
                    if vol.data()[c * plane + i] != 0.0 {
                        assert_ne!(a.data()[i], b.data()[i], "mass off the changed region");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_hints_shape() {
        let e = empty_hints::<f64>(4, 4, 9);
        assert_eq!(e.forward.shape(), &[18, 4, 4]);
        assert_eq!(e.mass(), 0.0);
        assert_eq!(e.source, HintSource::Empty);
        let v = super::super::build_event_volume::<f64>(&[], 9, 4, 4).unwrap();
        assert_eq!(v.tensor().shape(), e.backward.shape());
    }

    #[test]
    fn parses_backend_names() {
        assert_eq!("flow".parse::<HintSource>().unwrap(), HintSource::Flow);
        assert!("optical".parse::<HintSource>().is_err());
    }
}
