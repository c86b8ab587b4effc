use rand::Rng;
use vfi_tensor::nn::Conv2d;
use vfi_tensor::{Graph, ParamStore, Scalar, Var};

/// Three-layer patch discriminator; sees images only, never hints.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator<S: Scalar> {
    store: ParamStore<S>,
    layers: [Conv2d; 3],
}

impl<S: Scalar> PatchDiscriminator<S> {
    pub fn new<R: Rng + ?Sized>(channels: usize, width: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let layers = [
            Conv2d::new(&mut store, "disc.0", channels, width, 4, 2, 1, rng),
            Conv2d::new(&mut store, "disc.1", width, 2 * width, 4, 2, 1, rng),
            Conv2d::same3(&mut store, "disc.2", 2 * width, 1, rng),
        ];
        Self { store, layers }
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Per-patch logits.
    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Var<'g, S> {
        let slope = S::of(0.2);
        let h = self.layers[0].forward(g, &self.store, x).leaky_relu(slope);
        let h = self.layers[1].forward(g, &self.store, h).leaky_relu(slope);
        self.layers[2].forward(g, &self.store, h)
    }
}

/// `mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))`.
pub fn hinge_disc_loss<'g, S: Scalar>(real: Var<'g, S>, fake: Var<'g, S>) -> Var<'g, S> {
    real.one_minus().relu().mean().add(fake.add_scalar(S::one()).relu().mean())
}

/// Generator side of the hinge objective, `-mean(D(fake))`.
pub fn hinge_gen_loss<'g, S: Scalar>(fake: Var<'g, S>) -> Var<'g, S> {
    fake.mean().neg()
}
