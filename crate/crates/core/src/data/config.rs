use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use vfi_tensor::Scalar;

use super::{MotionTier, SyntheticConfig};
use crate::codec::{CodecConfig, CodecTrainConfig};
use crate::denoiser::{DenoiserConfig, DenoiserTrainConfig};
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::event_motion::{HintBackend, HintSource, I2eConfig, LearnedI2e, DEFAULT_BLOCK, DEFAULT_RADIUS};
use crate::sampling::{HintMode, SamplerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HintConfig {
    pub backend: HintSource,
    /// Log-intensity contrast threshold of the event simulator.
    pub threshold: f64,
    pub flow_block: usize,
    pub flow_radius: usize,
}

impl Default for HintConfig {
    fn default() -> Self {
        Self { backend: HintSource::Simulator, threshold: 0.1, flow_block: DEFAULT_BLOCK, flow_radius: DEFAULT_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// DDIM step count; DDPM kinds visit every timestep.
    pub steps: usize,
    pub mode: HintMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { kind: SamplerKind::MaDdim, steps: 200, mode: HintMode::Dynamic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub synthetic: SyntheticConfig,
    pub train_count: usize,
    pub eval_count: usize,
    /// Restricts generated eval triplets to one tier; otherwise tiers cycle by id.
    pub eval_tier: Option<MotionTier>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { synthetic: SyntheticConfig::default(), train_count: 2000, eval_count: 200, eval_tier: None }
    }
}

impl DatasetConfig {
    /// Train ids are `0..train_count`, eval ids follow, so splits never overlap.
    pub fn eval_first_id(&self) -> u64 {
        self.train_count as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub data: u64,
    pub train: u64,
    pub sample: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { data: 0, train: 1, sample: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// One full train-and-evaluate run per seed and cell.
    pub seeds: Vec<u64>,
    pub tier: MotionTier,
    pub eval_count: usize,
    pub sampler_steps: usize,
    pub include_global: bool,
    pub include_flow: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            tier: MotionTier::Hard,
            eval_count: 24,
            sampler_steps: 20,
            include_global: true,
            include_flow: true,
        }
    }
}

/// Every tunable of a run. Loaded from TOML; dotted keys such as
/// `codec.embed_dim = 8` and `[codec]` tables are interchangeable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleSpec,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub denoiser: DenoiserConfig,
    pub denoiser_train: DenoiserTrainConfig,
    pub i2e: I2eConfig,
    pub hints: HintConfig,
    pub sampler: SamplerConfig,
    pub dataset: DatasetConfig,
    pub seeds: SeedConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.codec.validate()?;
        self.codec_train.validate()?;
        self.denoiser.validate()?;
        self.denoiser_train.validate()?;
        self.dataset.synthetic.validate()?;
        let bins = self.codec.bins;
        if self.denoiser.bins != bins || self.i2e.bins != bins {
            return Err(Error::Config(format!(
                "codec.bins ({bins}), denoiser.bins ({}) and i2e.bins ({}) must agree",
                self.denoiser.bins, self.i2e.bins
            )));
        }
        if self.denoiser.latent_channels != self.codec.embed_dim {
            return Err(Error::Config(format!(
                "denoiser.latent_channels ({}) must equal codec.embed_dim ({})",
                self.denoiser.latent_channels, self.codec.embed_dim
            )));
        }
        if self.codec.image_channels != self.dataset.synthetic.channels {
            return Err(Error::Config("codec.image_channels must equal dataset.synthetic.channels".into()));
        }
        let syn = &self.dataset.synthetic;
        self.codec.check_resolution(syn.height, syn.width)?;
        if !(self.hints.threshold > 0.0) || self.hints.flow_block == 0 {
            return Err(Error::Config("hints.threshold must be positive and hints.flow_block non-zero".into()));
        }
        if self.sampler.kind.is_ddim() && (self.sampler.steps == 0 || self.sampler.steps > self.schedule.steps) {
            return Err(Error::Config(format!("sampler.steps must lie in 1..={}", self.schedule.steps)));
        }
        if self.ablation.seeds.is_empty() || self.ablation.eval_count == 0 {
            return Err(Error::Config("ablation needs at least one seed and one eval triplet".into()));
        }
        if self.ablation.sampler_steps == 0 || self.ablation.sampler_steps > self.schedule.steps {
            return Err(Error::Config(format!("ablation.sampler_steps must lie in 1..={}", self.schedule.steps)));
        }
        Ok(())
    }

    /// Flat `dotted.key -> value` view.
    pub fn flatten(&self) -> Result<BTreeMap<String, Value>> {
        fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
            match v {
                Value::Object(map) => {
                    for (k, child) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                other => {
                    out.insert(prefix.to_string(), other.clone());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk("", &serde_json::to_value(self)?, &mut out);
        Ok(out)
    }

    /// TOML with one `dotted.key = value` line per setting.
    pub fn to_dotted_toml(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in self.flatten()? {
            if v.is_null() {
                continue;
            }
            let value: toml::Value = serde_json::from_value(v)?;
            out.push_str(&format!("{k} = {value}\n"));
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form; keys are sorted.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    /// Hint backend described by `hints`, or by `source` when given.
    ///
    /// A learned backend needs its trained network.
    pub fn hint_backend<S: Scalar>(
        &self,
        source: Option<HintSource>,
        learned: Option<LearnedI2e<S>>,
    ) -> Result<HintBackend<S>> {
        let bins = self.codec.bins;
        Ok(match source.unwrap_or(self.hints.backend) {
            HintSource::Simulator => HintBackend::Simulator { threshold: self.hints.threshold, bins },
            HintSource::Flow => HintBackend::Flow { bins, block: self.hints.flow_block, radius: self.hints.flow_radius },
            HintSource::Empty => HintBackend::Empty { bins },
            HintSource::LearnedI2e => HintBackend::Learned(std::sync::Arc::new(
                learned.ok_or_else(|| Error::Config("the learned hint backend needs a trained i2e checkpoint".into()))?,
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let a = RunConfig::from_toml_str("codec.embed_dim = 8\ndenoiser.latent_channels = 8\nsampler.kind = \"ma-ddpm\"\n")
            .unwrap();
        let b = RunConfig::from_toml_str("[codec]\nembed_dim = 8\n[denoiser]\nlatent_channels = 8\n[sampler]\nkind = \"ma_ddpm\"\n")
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.codec.embed_dim, 8);
        assert_eq!(a.sampler.kind, SamplerKind::MaDdpm);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), RunConfig::default().hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["codec.embed_dimm = 8", "bogus = 1", "[schedule]\nsteps = 10\nwarmup = 3"] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn cross_section_checks() {
        assert!(RunConfig::from_toml_str("codec.bins = 4").unwrap_err().is_config());
        assert!(RunConfig::from_toml_str("codec.embed_dim = 4").unwrap_err().is_config());
        assert!(RunConfig::from_toml_str("sampler.steps = 2000").unwrap_err().is_config());
    }

    #[test]
    fn dotted_toml_round_trips() {
        let mut c = RunConfig::default();
        c.dataset.eval_tier = Some(MotionTier::Hard);
        c.hints.backend = HintSource::Flow;
        let text = c.to_dotted_toml().unwrap();
        assert!(text.contains("codec.embed_dim = 64"));
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
        assert!(c.flatten().unwrap().contains_key("dataset.synthetic.height"));
    }

    #[test]
    fn learned_backend_needs_a_network() {
        let c = RunConfig::default();
        assert!(c.hint_backend::<f32>(Some(HintSource::LearnedI2e), None).is_err());
        assert_eq!(c.hint_backend::<f32>(None, None).unwrap().source(), HintSource::Simulator);
    }
}
