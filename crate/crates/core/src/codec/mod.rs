//! Vector-quantised motion-aware autoencoder.

mod config;
mod discriminator;
mod model;
mod quantize;
mod train;

pub use config::{CodecConfig, CodecTrainConfig};
pub use discriminator::{hinge_disc_loss, hinge_gen_loss, PatchDiscriminator};
pub use model::{Codec, FeaturePyramid};
pub use quantize::{nearest_codes, perplexity, quantize, quantize_var, Quantized, QuantizedVar};
pub use train::{edge_l1, sobel, CodecStepStats, CodecTrainReport, CodecTrainer, HintDropout};
