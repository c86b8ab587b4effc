//! Motion-hint conditioned latent diffusion for video frame interpolation.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod event_motion;
pub mod image;
pub mod ma_warp;
mod nets;
pub mod sampling;

pub use error::{Error, Result};
pub use image::Image;

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Codec32 = codec::Codec<f32>;
pub type Codec64 = codec::Codec<f64>;
pub type Denoiser32 = denoiser::Denoiser<f32>;
pub type Denoiser64 = denoiser::Denoiser<f64>;
