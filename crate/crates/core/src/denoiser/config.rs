use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise-prediction U-Net over latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_width: usize,
    /// Resolution stages; stage `s` runs at `1 / 2^s` of the latent size.
    pub depth: usize,
    pub attention_heads: usize,
    pub time_embed_dim: usize,
    /// Temporal bins per polarity of the hint volumes.
    pub bins: usize,
    /// When false the hint adapter is never evaluated.
    pub use_hints: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 64,
            base_width: 64,
            depth: 3,
            attention_heads: 4,
            time_embed_dim: 128,
            bins: 9,
            use_hints: true,
        }
    }
}

impl DenoiserConfig {
    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn hint_channels(&self) -> usize {
        2 * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.base_width == 0 || self.depth == 0 || self.attention_heads == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even and at least 2".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be at least 2".into()));
        }
        for s in 0..self.depth {
            if self.width(s) % self.attention_heads != 0 {
                return Err(Error::Config(format!(
                    "stage width {} is not divisible by {} attention heads",
                    self.width(s),
                    self.attention_heads
                )));
            }
        }
        Ok(())
    }

    /// Latent sides must halve cleanly at every stage.
    pub fn check_latent(&self, height: usize, width: usize) -> Result<()> {
        let f = 1 << (self.depth - 1);
        if height == 0 || width == 0 || height % f != 0 || width % f != 0 {
            return Err(Error::ResizeRequired { height, width, factor: f });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub augment: bool,
    pub crop: usize,
    /// Stop once the probe loss falls below this fraction of its initial value.
    pub early_stop: Option<f64>,
    /// Fixed `(t, eps)` draws used to measure loss without sampling noise.
    pub probe_draws: usize,
    /// Probe evaluation interval in steps.
    pub probe_every: usize,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.0,
            grad_clip: 1.0,
            augment: true,
            crop: 0,
            early_stop: None,
            probe_draws: 16,
            probe_every: 100,
        }
    }
}

impl DenoiserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("denoiser training needs batch_size > 0, lr > 0, weight_decay >= 0".into()));
        }
        if self.probe_every == 0 {
            return Err(Error::Config("probe_every must be positive".into()));
        }
        Ok(())
    }
}
