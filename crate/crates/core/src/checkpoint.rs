//! Model and trainer checkpoints on top of [`ArrayFile`].
//!
//! Every checkpoint stores the model config, an optional run-config hash and
//! the raw parameter values. Trainer checkpoints add Adam moments, the step
//! counter and the RNG position so training resumes exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vfi_tensor::{Adam, AdamConfig, ParamStore, Scalar};

use crate::codec::{Codec, CodecConfig, CodecTrainConfig, CodecTrainer};
use crate::data::ArrayFile;
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserTrainConfig, DenoiserTrainer};
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::event_motion::{I2eConfig, LearnedI2e};

pub const CODEC_KIND: &str = "codec";
pub const DENOISER_KIND: &str = "denoiser";
pub const I2E_KIND: &str = "i2e";

/// Position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Header fields shared by every checkpoint kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointInfo {
    /// Hash of the run config that produced the checkpoint.
    pub config_hash: Option<String>,
    pub step: u64,
}

fn push_store<S: Scalar>(file: &mut ArrayFile<S>, prefix: &str, store: &ParamStore<S>) {
    for (name, t) in store.iter() {
        file.push(format!("{prefix}{name}"), t.clone());
    }
}

fn load_store<S: Scalar>(file: &ArrayFile<S>, prefix: &str, store: &mut ParamStore<S>) -> Result<()> {
    store
        .load_values(file.with_prefix(prefix).map(|(n, t)| (n, t.clone())))
        .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
}

fn push_adam<S: Scalar>(file: &mut ArrayFile<S>, prefix: &str, store: &ParamStore<S>, opt: &Adam<S>) {
    for (i, (name, _)) in store.iter().enumerate() {
        file.push(format!("{prefix}m/{name}"), opt.first[i].clone());
        file.push(format!("{prefix}v/{name}"), opt.second[i].clone());
    }
}

fn load_adam<S: Scalar>(file: &ArrayFile<S>, prefix: &str, store: &ParamStore<S>, opt: &mut Adam<S>, step: u64) -> Result<()> {
    for (i, (name, t)) in store.iter().enumerate() {
        for (slot, tag) in [(&mut opt.first[i], "m"), (&mut opt.second[i], "v")] {
            let v = file
                .get(&format!("{prefix}{tag}/{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {prefix}{tag}/{name}")))?;
            if v.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("optimizer state {name} has the wrong shape")));
            }
            *slot = v.clone();
        }
    }
    opt.step = step;
    Ok(())
}

fn header<T: DeserializeOwned>(file: &ArrayFile<impl Scalar>, kind: &str, key: &str) -> Result<T> {
    if file.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", file.kind)));
    }
    let v = file.meta.get(key).cloned().ok_or_else(|| Error::Checkpoint(format!("header lacks {key}")))?;
    Ok(serde_json::from_value(v)?)
}

fn info_of(file: &ArrayFile<impl Scalar>) -> Result<CheckpointInfo> {
    Ok(serde_json::from_value(file.meta.get("info").cloned().unwrap_or(Value::Null)).unwrap_or_default())
}

/// Refuses checkpoints produced under a different run config.
pub fn check_config_hash(info: &CheckpointInfo, expected: &str) -> Result<()> {
    match &info.config_hash {
        Some(h) if h != expected => Err(Error::Checkpoint(format!("checkpoint config hash {h} differs from {expected}"))),
        _ => Ok(()),
    }
}

pub fn codec_file<S: Scalar>(codec: &Codec<S>, info: &CheckpointInfo) -> Result<ArrayFile<S>> {
    let mut f = ArrayFile::new(CODEC_KIND, json!({ "config": codec.config(), "info": info }));
    push_store(&mut f, "param/", codec.store());
    Ok(f)
}

pub fn codec_from_file<S: Scalar>(file: &ArrayFile<S>) -> Result<(Codec<S>, CheckpointInfo)> {
    let config: CodecConfig = header(file, CODEC_KIND, "config")?;
    let mut codec = Codec::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_store(file, "param/", codec.store_mut())?;
    Ok((codec, info_of(file)?))
}

pub fn save_codec<S: Scalar>(path: &Path, codec: &Codec<S>, info: &CheckpointInfo) -> Result<()> {
    codec_file(codec, info)?.save(path)
}

pub fn load_codec<S: Scalar>(path: &Path) -> Result<(Codec<S>, CheckpointInfo)> {
    codec_from_file(&ArrayFile::load(path)?)
}

pub fn denoiser_file<S: Scalar>(denoiser: &Denoiser<S>, info: &CheckpointInfo) -> Result<ArrayFile<S>> {
    let mut f = ArrayFile::new(
        DENOISER_KIND,
        json!({
            "config": denoiser.config(),
            "schedule": denoiser.schedule(),
            "latent_scale": denoiser.latent_scale,
            "info": info,
        }),
    );
    push_store(&mut f, "param/", denoiser.store());
    Ok(f)
}

pub fn denoiser_from_file<S: Scalar>(file: &ArrayFile<S>) -> Result<(Denoiser<S>, CheckpointInfo)> {
    let config: DenoiserConfig = header(file, DENOISER_KIND, "config")?;
    let schedule: ScheduleSpec = header(file, DENOISER_KIND, "schedule")?;
    let latent_scale: f64 = header(file, DENOISER_KIND, "latent_scale")?;
    let mut denoiser = Denoiser::new(config, schedule, &mut ChaCha8Rng::seed_from_u64(0))?;
    denoiser.latent_scale = latent_scale;
    load_store(file, "param/", denoiser.store_mut())?;
    Ok((denoiser, info_of(file)?))
}

pub fn save_denoiser<S: Scalar>(path: &Path, denoiser: &Denoiser<S>, info: &CheckpointInfo) -> Result<()> {
    denoiser_file(denoiser, info)?.save(path)
}

pub fn load_denoiser<S: Scalar>(path: &Path) -> Result<(Denoiser<S>, CheckpointInfo)> {
    denoiser_from_file(&ArrayFile::load(path)?)
}

pub fn save_i2e<S: Scalar>(path: &Path, net: &LearnedI2e<S>, info: &CheckpointInfo) -> Result<()> {
    let mut f = ArrayFile::new(I2E_KIND, json!({ "config": net.config(), "info": info }));
    push_store(&mut f, "param/", net.store());
    f.save(path)
}

pub fn load_i2e<S: Scalar>(path: &Path) -> Result<(LearnedI2e<S>, CheckpointInfo)> {
    let file = ArrayFile::load(path)?;
    let config: I2eConfig = header(&file, I2E_KIND, "config")?;
    let mut net = LearnedI2e::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_store(&file, "param/", net.store_mut())?;
    Ok((net, info_of(&file)?))
}

#[derive(Serialize, Deserialize)]
struct AdamEcho {
    config: AdamEchoConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct AdamEchoConfig {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamEcho {
    fn of<S>(opt: &Adam<S>) -> Self {
        let c = &opt.config;
        Self {
            config: AdamEchoConfig { lr: c.lr, beta1: c.beta1, beta2: c.beta2, eps: c.eps, weight_decay: c.weight_decay },
            step: opt.step,
        }
    }

    fn config(&self) -> AdamConfig {
        let c = &self.config;
        AdamConfig { lr: c.lr, beta1: c.beta1, beta2: c.beta2, eps: c.eps, weight_decay: c.weight_decay }
    }
}

/// Codec, discriminator and both optimizers.
pub fn save_codec_trainer<S: Scalar>(path: &Path, trainer: &CodecTrainer<S>, config_hash: Option<String>) -> Result<()> {
    let info = CheckpointInfo { config_hash, step: trainer.step as u64 };
    let mut f = codec_file(&trainer.codec, &info)?;
    f.meta["train"] = json!({
        "config": trainer.config,
        "rng": RngState::of(&trainer.rng),
        "adam": AdamEcho::of(&trainer.opt),
        "disc_adam": AdamEcho::of(&trainer.disc_opt),
    });
    push_adam(&mut f, "adam.", trainer.codec.store(), &trainer.opt);
    push_store(&mut f, "disc/", trainer.disc.store());
    push_adam(&mut f, "disc_adam.", trainer.disc.store(), &trainer.disc_opt);
    f.save(path)
}

pub fn load_codec_trainer<S: Scalar>(path: &Path) -> Result<CodecTrainer<S>> {
    let file = ArrayFile::load(path)?;
    let (codec, info) = codec_from_file(&file)?;
    let train = file.meta.get("train").ok_or_else(|| Error::Checkpoint("not a trainer checkpoint".into()))?;
    let config: CodecTrainConfig = serde_json::from_value(train["config"].clone())?;
    let rng: RngState = serde_json::from_value(train["rng"].clone())?;
    let adam: AdamEcho = serde_json::from_value(train["adam"].clone())?;
    let disc_adam: AdamEcho = serde_json::from_value(train["disc_adam"].clone())?;
    let mut t = CodecTrainer::new(codec, config, 0)?;
    t.opt.config = adam.config();
    t.disc_opt.config = disc_adam.config();
    load_adam(&file, "adam.", t.codec.store(), &mut t.opt, adam.step)?;
    load_store(&file, "disc/", t.disc.store_mut())?;
    load_adam(&file, "disc_adam.", t.disc.store(), &mut t.disc_opt, disc_adam.step)?;
    t.step = info.step as usize;
    t.rng = rng.restore()?;
    Ok(t)
}

pub fn save_denoiser_trainer<S: Scalar>(
    path: &Path,
    trainer: &DenoiserTrainer<S>,
    config_hash: Option<String>,
) -> Result<()> {
    let info = CheckpointInfo { config_hash, step: trainer.step as u64 };
    let mut f = denoiser_file(&trainer.denoiser, &info)?;
    f.meta["train"] = json!({
        "config": trainer.config,
        "rng": RngState::of(&trainer.rng),
        "adam": AdamEcho::of(&trainer.opt),
    });
    push_adam(&mut f, "adam.", trainer.denoiser.store(), &trainer.opt);
    f.save(path)
}

pub fn load_denoiser_trainer<S: Scalar>(path: &Path) -> Result<DenoiserTrainer<S>> {
    let file = ArrayFile::load(path)?;
    let (denoiser, info) = denoiser_from_file(&file)?;
    let train = file.meta.get("train").ok_or_else(|| Error::Checkpoint("not a trainer checkpoint".into()))?;
    let config: DenoiserTrainConfig = serde_json::from_value(train["config"].clone())?;
    let rng: RngState = serde_json::from_value(train["rng"].clone())?;
    let adam: AdamEcho = serde_json::from_value(train["adam"].clone())?;
    let mut t = DenoiserTrainer::new(denoiser, config, 0)?;
    t.opt.config = adam.config();
    load_adam(&file, "adam.", t.denoiser.store(), &mut t.opt, adam.step)?;
    t.step = info.step as usize;
    t.rng = rng.restore()?;
    Ok(t)
}
