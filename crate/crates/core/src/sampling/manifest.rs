use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfi_tensor::Scalar;

use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::event_motion::{HintBackend, HintSource};
use crate::image::Image;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[serde(alias = "baseline-ddpm")]
    BaselineDdpm,
    #[serde(alias = "baseline-ddim")]
    BaselineDdim,
    #[serde(alias = "ma-ddpm")]
    MaDdpm,
    #[serde(alias = "ma-ddim")]
    MaDdim,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] =
        [SamplerKind::BaselineDdpm, SamplerKind::BaselineDdim, SamplerKind::MaDdpm, SamplerKind::MaDdim];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::BaselineDdpm => "baseline-ddpm",
            SamplerKind::BaselineDdim => "baseline-ddim",
            SamplerKind::MaDdpm => "ma-ddpm",
            SamplerKind::MaDdim => "ma-ddim",
        }
    }

    pub fn is_ddim(self) -> bool {
        matches!(self, SamplerKind::BaselineDdim | SamplerKind::MaDdim)
    }

    pub fn is_motion_aware(self) -> bool {
        matches!(self, SamplerKind::MaDdpm | SamplerKind::MaDdim)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler {s:?}")))
    }
}

/// Where per-step hints come from in motion-aware sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HintMode {
    /// Re-extracted each step against the current middle-frame estimate.
    #[default]
    Dynamic,
    /// Extracted once from the two input frames and held fixed.
    Global,
}

/// Serializable description of a hint backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEcho {
    pub source: HintSource,
    pub bins: usize,
    pub threshold: Option<f64>,
}

impl BackendEcho {
    pub fn of<S: Scalar>(backend: &HintBackend<S>) -> Self {
        let threshold = match backend {
            HintBackend::Simulator { threshold, .. } => Some(*threshold),
            HintBackend::Learned(net) => Some(net.config().threshold),
            _ => None,
        };
        Self { source: backend.source(), bins: backend.bins(), threshold }
    }
}

/// Hints consumed and produced at one sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintTraceEntry {
    pub t: usize,
    pub used_mass: f64,
    /// Mass of the hints re-extracted at this step (absent when hints are fixed).
    pub extracted_mass: Option<f64>,
}

/// Everything needed to repeat a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub version: u32,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub sampler: SamplerKind,
    pub hint_backend: BackendEcho,
    pub hint_mode: HintMode,
    /// Requested step count; the full schedule for DDPM kinds.
    pub steps: usize,
    pub timesteps: Vec<usize>,
    pub latent_scale: f64,
    pub decoder_calls: usize,
    pub hint_trace: Vec<HintTraceEntry>,
    pub codec_digest: String,
    pub denoiser_digest: String,
    pub output_digest: String,
}

impl SampleManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SampleManifest = serde_json::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Checkpoint(format!("manifest version {} is not supported", m.version)));
        }
        Ok(m)
    }
}

/// SHA-256 over the little-endian bytes of `values`.
pub fn digest_values<S: Scalar>(values: impl IntoIterator<Item = S>) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for v in values {
        buf.clear();
        v.write_le(&mut buf);
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

/// Digest of every parameter name and value in a store.
pub fn params_digest<S: Scalar>(store: &vfi_tensor::ParamStore<S>) -> String {
    let mut h = Sha256::new();
    for (name, t) in store.iter() {
        h.update(name.as_bytes());
        h.update(format!("{:?}", t.shape()).as_bytes());
        h.update(digest_values(t.data().iter().copied()).as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn image_digest<S: Scalar>(image: &Image<S>) -> String {
    let (c, hh, w) = image.dims();
    let mut h = Sha256::new();
    h.update(format!("{c}x{hh}x{w}:").as_bytes());
    h.update(digest_values(image.data().iter().copied()).as_bytes());
    hex::encode(h.finalize())
}
