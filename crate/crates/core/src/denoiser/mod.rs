//! Motion-conditioned noise prediction network and its training loop.

mod config;
mod model;
mod train;

pub use config::{DenoiserConfig, DenoiserTrainConfig};
pub use model::{timestep_embedding, DenoiseInput, Denoiser};
pub use train::{
    encode_triplet, fit_latent_scale, sample_timestep, DenoiserStepStats, DenoiserTrainReport, DenoiserTrainer,
    LatentTriplet,
};
