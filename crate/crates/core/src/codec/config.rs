use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the vector-quantised motion-aware autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    /// Image channels, 1 or 3.
    pub image_channels: usize,
    /// Spatial downsample factor, `2^pyramid_levels`.
    pub factor: usize,
    pub pyramid_levels: usize,
    pub codebook_size: usize,
    pub embed_dim: usize,
    pub base_width: usize,
    /// Temporal bins per polarity; hint volumes carry `2 * bins` channels.
    pub bins: usize,
    /// When false the decoder ignores hint contents and always sees zeros.
    pub use_hints: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            factor: 8,
            pyramid_levels: 3,
            codebook_size: 512,
            embed_dim: 64,
            base_width: 64,
            bins: 9,
            use_hints: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config(format!("image_channels must be 1 or 3, got {}", self.image_channels)));
        }
        if self.pyramid_levels == 0 || self.factor != 1 << self.pyramid_levels {
            return Err(Error::Config(format!(
                "factor {} must equal 2^pyramid_levels with pyramid_levels {} >= 1",
                self.factor, self.pyramid_levels
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook_size must be at least 2".into()));
        }
        if self.embed_dim == 0 || self.base_width == 0 {
            return Err(Error::Config("embed_dim and base_width must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("bins must be at least 2".into()));
        }
        Ok(())
    }

    pub fn hint_channels(&self) -> usize {
        2 * self.bins
    }

    /// Feature width at pyramid level `l` (1-based): doubles per level, capped at 4x.
    pub fn width(&self, level: usize) -> usize {
        self.base_width * (1usize << (level.max(1) - 1)).min(4)
    }

    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || height % self.factor != 0 || width % self.factor != 0 {
            return Err(Error::ResizeRequired { height, width, factor: self.factor });
        }
        Ok(())
    }
}

/// Codec optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_percep: f64,
    pub lambda_adv: f64,
    /// Fraction of `steps` before the adversarial term switches on.
    pub adv_warmup: f64,
    pub hint_dropout: f64,
    pub commitment: f64,
    pub disc_width: usize,
    pub disc_lr: f64,
    pub grad_clip: f64,
    /// Random crop size for augmentation; 0 keeps full frames.
    pub crop: usize,
    pub augment: bool,
    /// Stop once the smoothed loss falls below this fraction of the initial loss.
    pub early_stop: Option<f64>,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-4,
            lambda_percep: 0.1,
            lambda_adv: 0.1,
            adv_warmup: 0.2,
            hint_dropout: 0.5,
            commitment: 0.25,
            disc_width: 32,
            disc_lr: 1e-4,
            grad_clip: 1.0,
            crop: 0,
            augment: true,
            early_stop: None,
        }
    }
}

impl CodecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hint_dropout) || !(0.0..=1.0).contains(&self.adv_warmup) {
            return Err(Error::Config("hint_dropout and adv_warmup must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lambda_percep < 0.0 || self.lambda_adv < 0.0 || self.commitment < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        CodecConfig::default().validate().unwrap();
        CodecTrainConfig::default().validate().unwrap();
    }

    #[test]
    fn factor_must_match_levels() {
        let c = CodecConfig { factor: 16, ..CodecConfig::default() };
        assert!(c.validate().is_err());
        let c = CodecConfig { factor: 32, pyramid_levels: 5, codebook_size: 8192, ..CodecConfig::default() };
        c.validate().unwrap();
    }

    #[test]
    fn resolution_check() {
        let c = CodecConfig::default();
        assert!(c.check_resolution(64, 64).is_ok());
        assert!(matches!(c.check_resolution(60, 64), Err(Error::ResizeRequired { .. })));
    }
}
