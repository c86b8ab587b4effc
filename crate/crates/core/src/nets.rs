//! Building blocks shared by the codec and the denoiser.

use rand::Rng;
use vfi_tensor::nn::{Conv2d, GroupNorm, Linear};
use vfi_tensor::{Graph, ParamStore, Scalar, Var};

pub(crate) const MAX_GROUPS: usize = 8;

/// Pre-activation residual block with optional additive embedding.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    embed: Option<Linear>,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        embed_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), cin, MAX_GROUPS),
            conv1: Conv2d::same3(ps, &format!("{name}.conv1"), cin, cout, rng),
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), cout, MAX_GROUPS),
            conv2: Conv2d::same3(ps, &format!("{name}.conv2"), cout, cout, rng),
            embed: embed_dim.map(|d| Linear::new(ps, &format!("{name}.embed"), d, cout, rng)),
            skip: (cin != cout).then(|| Conv2d::new(ps, &format!("{name}.skip"), cin, cout, 1, 1, 0, rng)),
        }
    }

    pub fn forward<'g, S: Scalar>(
        &self,
        g: &'g Graph<S>,
        ps: &ParamStore<S>,
        x: Var<'g, S>,
        emb: Option<Var<'g, S>>,
    ) -> Var<'g, S> {
        let mut h = self.conv1.forward(g, ps, self.norm1.forward(g, ps, x).silu());
        if let (Some(lin), Some(e)) = (&self.embed, emb) {
            h = h.add_channel_vector(lin.forward(g, ps, e));
        }
        let h = self.conv2.forward(g, ps, self.norm2.forward(g, ps, h).silu());
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, ps, x),
            None => x,
        };
        skip.add(h)
    }
}
