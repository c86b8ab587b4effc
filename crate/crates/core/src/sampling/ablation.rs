use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_tensor::Scalar;

use super::manifest::{HintMode, SamplerKind};
use super::sampler::{sample, sample_baseline, sample_refine_decode, Models};
use crate::codec::{Codec, CodecTrainer};
use crate::data::{l1, psnr, ssim, FrameTriplet, RunConfig};
use crate::denoiser::{Denoiser, DenoiserTrainer};
use crate::error::{Error, Result};
use crate::event_motion::{HintBackend, HintSource};

/// One configuration of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cell {
    /// No hints in the codec, plain sampling.
    Exp0,
    /// No hints in the codec, motion-aware sampling.
    Exp1,
    /// Hint-aware codec, plain sampling followed by a hint-guided second decode.
    Exp2,
    /// Hint-aware codec and motion-aware sampling.
    Exp3,
    /// Exp3 with hints extracted once from the input pair.
    Exp3Global,
    /// Exp3 with block-matching flow hints.
    Exp3Flow,
}

impl Cell {
    pub const ALL: [Cell; 6] = [Cell::Exp0, Cell::Exp1, Cell::Exp2, Cell::Exp3, Cell::Exp3Global, Cell::Exp3Flow];

    pub fn name(self) -> &'static str {
        match self {
            Cell::Exp0 => "exp0",
            Cell::Exp1 => "exp1",
            Cell::Exp2 => "exp2",
            Cell::Exp3 => "exp3",
            Cell::Exp3Global => "exp3-global",
            Cell::Exp3Flow => "exp3-flow",
        }
    }

    pub fn codec_hints(self) -> bool {
        !matches!(self, Cell::Exp0 | Cell::Exp1)
    }

    pub fn denoiser_hints(self) -> bool {
        !matches!(self, Cell::Exp0 | Cell::Exp2)
    }

    pub fn backend(self) -> HintSource {
        match self {
            Cell::Exp3Flow => HintSource::Flow,
            _ => HintSource::Simulator,
        }
    }

    /// Model variants this cell evaluates with.
    pub fn variant(self, seed: u64) -> VariantKey {
        VariantKey {
            codec_hints: self.codec_hints(),
            denoiser_hints: self.denoiser_hints(),
            backend: self.backend(),
            seed,
        }
    }

    /// Matrix for `ablation.include_*` switches.
    pub fn matrix(include_global: bool, include_flow: bool) -> Vec<Cell> {
        Cell::ALL
            .into_iter()
            .filter(|c| match c {
                Cell::Exp3Global => include_global,
                Cell::Exp3Flow => include_flow,
                _ => true,
            })
            .collect()
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cell::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown ablation cell {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodecKey {
    pub hints: bool,
    pub backend: HintSource,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantKey {
    pub codec_hints: bool,
    pub denoiser_hints: bool,
    pub backend: HintSource,
    pub seed: u64,
}

impl VariantKey {
    pub fn codec(&self) -> CodecKey {
        // A codec without hints never sees the backend.
        let backend = if self.codec_hints { self.backend } else { HintSource::Simulator };
        CodecKey { hints: self.codec_hints, backend, seed: self.seed }
    }
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "codec_hints={} denoiser_hints={} backend={} seed={}",
            self.codec_hints, self.denoiser_hints, self.backend, self.seed
        )
    }
}

/// Trained models for every needed variant.
#[derive(Debug, Default)]
pub struct Variants<S: Scalar> {
    pub codecs: BTreeMap<CodecKey, Codec<S>>,
    pub denoisers: BTreeMap<VariantKey, Denoiser<S>>,
}

impl<S: Scalar> Variants<S> {
    pub fn new() -> Self {
        Self { codecs: BTreeMap::new(), denoisers: BTreeMap::new() }
    }

    pub fn models(&self, key: &VariantKey) -> Result<Models<'_, S>> {
        let codec = self.codecs.get(&key.codec()).ok_or_else(|| Error::MissingVariant(format!("codec for {key}")))?;
        let denoiser = self.denoisers.get(key).ok_or_else(|| Error::MissingVariant(format!("denoiser for {key}")))?;
        Models::new(codec, denoiser)
    }
}

/// Backend used for training and sampling a given hint source.
pub fn ablation_backend<S: Scalar>(config: &RunConfig, source: HintSource) -> Result<HintBackend<S>> {
    config.hint_backend(Some(source), None)
}

/// Trains every codec and denoiser the matrix needs, seeding each from its key.
pub fn train_variants<S: Scalar>(
    config: &RunConfig,
    matrix: &[Cell],
    train: &[FrameTriplet<S>],
    seeds: &[u64],
    mut log: impl FnMut(&str),
) -> Result<Variants<S>> {
    let mut out = Variants::new();
    for &seed in seeds {
        for cell in matrix {
            let key = cell.variant(seed);
            let backend = ablation_backend::<S>(config, key.backend)?;
            let ckey = key.codec();
            if !out.codecs.contains_key(&ckey) {
                let mut cfg = config.codec.clone();
                cfg.use_hints = ckey.hints;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let codec = Codec::new(cfg, &mut rng)?;
                let mut trainer = CodecTrainer::new(codec, config.codec_train.clone(), seed ^ 0xC0DEC)?;
                let report = trainer.train(train, &backend, |_| {})?;
                log(&format!(
                    "codec hints={} backend={} seed={seed}: {} steps, loss {:.4} -> {:.4}",
                    ckey.hints, ckey.backend, report.steps_run, report.initial_loss, report.final_loss
                ));
                out.codecs.insert(ckey, trainer.codec);
            }
            if !out.denoisers.contains_key(&key) {
                let codec = &out.codecs[&ckey];
                let mut cfg = config.denoiser.clone();
                cfg.use_hints = key.denoiser_hints;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                let denoiser = Denoiser::new(cfg, config.schedule, &mut rng)?;
                let mut trainer = DenoiserTrainer::new(denoiser, config.denoiser_train.clone(), seed ^ 0xD1FF)?;
                let report = trainer.train(codec, train, &backend, |_| {})?;
                log(&format!(
                    "denoiser {key}: {} steps, probe {:.4} -> {:.4}",
                    report.steps_run, report.initial_probe_loss, report.final_probe_loss
                ));
                out.denoisers.insert(key, trainer.denoiser);
            }
        }
    }
    Ok(out)
}

/// Mean metrics of one cell and seed over the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub cell: Cell,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub median_psnr: f64,
    pub median_ssim: f64,
    pub median_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub sampler_steps: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<CellSummary>,
}

impl AblationReport {
    pub fn cell(&self, cell: Cell) -> Option<&CellSummary> {
        self.summary.iter().find(|s| s.cell == cell)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn item_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ id
}

/// Interpolates `triplet.mid` the way `cell` prescribes.
pub fn run_cell<S: Scalar>(
    cell: Cell,
    triplet: &FrameTriplet<S>,
    models: &Models<'_, S>,
    backend: &HintBackend<S>,
    steps: usize,
    seed: u64,
) -> Result<crate::image::Image<S>> {
    let (p, n) = (&triplet.prev, &triplet.next);
    let out = match cell {
        Cell::Exp0 => sample_baseline(p, n, models, SamplerKind::BaselineDdim, steps, seed)?,
        Cell::Exp2 => sample_refine_decode(p, n, models, SamplerKind::BaselineDdim, steps, backend, seed)?,
        Cell::Exp1 | Cell::Exp3 | Cell::Exp3Flow => {
            sample(p, n, models, SamplerKind::MaDdim, steps, backend, HintMode::Dynamic, seed)?
        }
        Cell::Exp3Global => sample(p, n, models, SamplerKind::MaDdim, steps, backend, HintMode::Global, seed)?,
    };
    Ok(out.image)
}

/// Evaluates every cell for every seed; one run per (cell, seed).
pub fn run_ablation<S: Scalar>(
    config: &RunConfig,
    matrix: &[Cell],
    dataset: &[FrameTriplet<S>],
    seeds: &[u64],
    variants: &Variants<S>,
) -> Result<AblationReport> {
    if dataset.is_empty() || seeds.is_empty() || matrix.is_empty() {
        return Err(Error::InvalidArgument("ablation needs cells, seeds and evaluation triplets".into()));
    }
    let steps = config.ablation.sampler_steps;
    // Resolve everything up front so a missing variant fails before any work.
    for &seed in seeds {
        for cell in matrix {
            variants.models(&cell.variant(seed))?;
        }
    }
    let mut runs = Vec::with_capacity(matrix.len() * seeds.len());
    for &cell in matrix {
        let backend = ablation_backend::<S>(config, cell.backend())?;
        for &seed in seeds {
            let models = variants.models(&cell.variant(seed))?;
            let (mut sp, mut ss, mut sl) = (0.0, 0.0, 0.0);
            for t in dataset {
                let im = run_cell(cell, t, &models, &backend, steps, item_seed(seed, t.id))?;
                sp += psnr(&im, &t.mid)?;
                ss += ssim(&im, &t.mid)?;
                sl += l1(&im, &t.mid)?;
            }
            let k = dataset.len() as f64;
            runs.push(AblationRun { cell, seed, psnr: sp / k, ssim: ss / k, l1: sl / k, items: dataset.len() });
        }
    }
    let summary = matrix
        .iter()
        .map(|&cell| {
            let of = |f: fn(&AblationRun) -> f64| median(&runs.iter().filter(|r| r.cell == cell).map(f).collect::<Vec<_>>());
            CellSummary { cell, median_psnr: of(|r| r.psnr), median_ssim: of(|r| r.ssim), median_l1: of(|r| r.l1) }
        })
        .collect();
    Ok(AblationReport { sampler_steps: steps, seeds: seeds.to_vec(), runs, summary })
}
