use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfi_core::checkpoint::{
    check_config_hash, load_codec, load_denoiser, load_i2e, save_codec, save_denoiser, save_i2e, CheckpointInfo,
};
use vfi_core::codec::{Codec, CodecTrainer};
use vfi_core::data::{
    evaluate_dirs, generate_synthetic, load_split, read_png, save_split, write_png, ArrayFile, FrameTriplet, MotionTier,
    RunConfig,
};
use vfi_core::denoiser::{Denoiser, DenoiserTrainer};
use vfi_core::event_motion::{self as events, HintBackend, HintSource, LearnedI2e};
use vfi_core::sampling::{run_ablation, sample as run_sampler, train_variants, Cell, HintMode, Models, SamplerKind};
use vfi_core::{Error, Result};

use crate::Common;

type F = f32;

struct Setup {
    config: RunConfig,
    hash: String,
}

fn setup(common: &Common) -> Result<Setup> {
    let config = RunConfig::load(&common.config)?;
    let hash = config.hash()?;
    fs::create_dir_all(&common.out)?;
    Ok(Setup { config, hash })
}

fn info(setup: &Setup, step: usize) -> CheckpointInfo {
    CheckpointInfo { config_hash: Some(setup.hash.clone()), step: step as u64 }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn triplets(data: &Path, split: &str) -> Result<Vec<FrameTriplet<F>>> {
    let items: Vec<FrameTriplet<F>> = load_split(data, split)?.into_iter().map(|(t, _)| t).collect();
    if items.is_empty() {
        return Err(Error::Config(format!("split {split} under {} is empty", data.display())));
    }
    Ok(items)
}

fn backend(setup: &Setup, source: Option<HintSource>, i2e: Option<&Path>) -> Result<HintBackend<F>> {
    let wanted = source.unwrap_or(setup.config.hints.backend);
    let learned = match (wanted, i2e) {
        (HintSource::LearnedI2e, Some(path)) => {
            let (net, info) = load_i2e::<F>(path)?;
            check_config_hash(&info, &setup.hash)?;
            Some(net)
        }
        _ => None,
    };
    setup.config.hint_backend(Some(wanted), learned)
}

pub fn gen_data(common: &Common) -> Result<()> {
    let setup = setup(common)?;
    let d = &setup.config.dataset;
    let seed = common.seed.unwrap_or(setup.config.seeds.data);
    let cycle = |id: u64| Some(MotionTier::ALL[(id % 3) as usize]);
    let train = generate_synthetic::<F>(&d.synthetic, None, 0, d.train_count, seed)?;
    save_split(&common.out, "train", &train, cycle)?;
    let eval = generate_synthetic::<F>(&d.synthetic, d.eval_tier, d.eval_first_id(), d.eval_count, seed)?;
    save_split(&common.out, "eval", &eval, |id| d.eval_tier.or_else(|| cycle(id)))?;
    write_json(
        &common.out.join("dataset.json"),
        &serde_json::json!({ "config_hash": setup.hash, "seed": seed, "train": train.len(), "eval": eval.len() }),
    )?;
    println!("wrote {} train and {} eval triplets to {}", train.len(), eval.len(), common.out.display());
    Ok(())
}

pub fn simulate_events(common: &Common, prev: &Path, next: &Path) -> Result<()> {
    let setup = setup(common)?;
    let a = read_png::<F>(prev)?;
    let b = read_png::<F>(next)?;
    let threshold = setup.config.hints.threshold;
    let list = events::simulate_events(&a, &b, threshold)?;
    events::write_events(fs::File::create(common.out.join("events.txt"))?, &list)?;
    let volume = events::simulate_volume(&a, &b, threshold, setup.config.codec.bins)?;
    let mut file = ArrayFile::new("event_volume", serde_json::json!({ "bins": volume.bins(), "events": list.len() }));
    file.push("volume", volume.into_tensor());
    file.save(&common.out.join("volume.bin"))?;
    println!("{} events", list.len());
    Ok(())
}

pub fn train_codec(common: &Common, data: &Path) -> Result<()> {
    let setup = setup(common)?;
    let cfg = &setup.config;
    let train = triplets(data, "train")?;
    let seed = common.seed.unwrap_or(cfg.seeds.train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let learned = if cfg.hints.backend == HintSource::LearnedI2e {
        let mut net = LearnedI2e::<F>::new(cfg.i2e.clone(), &mut rng)?;
        let mut pairs = Vec::with_capacity(2 * train.len());
        for t in &train {
            pairs.push((t.prev.clone(), t.mid.clone()));
            pairs.push((t.mid.clone(), t.next.clone()));
        }
        let losses = net.train(&pairs, &mut rng)?;
        println!("i2e: {} steps, final loss {:.5}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
        save_i2e(&common.out.join("i2e.bin"), &net, &info(&setup, losses.len()))?;
        Some(net)
    } else {
        None
    };
    let backend = cfg.hint_backend(None, learned)?;
    let codec = Codec::<F>::new(cfg.codec.clone(), &mut rng)?;
    let mut trainer = CodecTrainer::new(codec, cfg.codec_train.clone(), seed)?;
    let every = (cfg.codec_train.steps / 20).max(1);
    let report = trainer.train(&train, &backend, |s| {
        if s.step % every == 0 {
            println!("step {:>6} loss {:.5} l1 {:.5} vq {:.5}", s.step, s.loss, s.l1, s.vq);
        }
    })?;
    save_codec(&common.out.join("codec.bin"), &trainer.codec, &info(&setup, report.steps_run))?;
    write_json(&common.out.join("codec_report.json"), &report)?;
    println!("codec: {} steps, loss {:.5} -> {:.5}", report.steps_run, report.initial_loss, report.final_loss);
    Ok(())
}

pub fn train_denoiser(common: &Common, data: &Path, codec_path: &Path, i2e: Option<&Path>) -> Result<()> {
    let setup = setup(common)?;
    let cfg = &setup.config;
    let train = triplets(data, "train")?;
    let (codec, cinfo) = load_codec::<F>(codec_path)?;
    check_config_hash(&cinfo, &setup.hash)?;
    let backend = backend(&setup, None, i2e)?;
    let seed = common.seed.unwrap_or(cfg.seeds.train);
    let denoiser = Denoiser::<F>::new(cfg.denoiser.clone(), cfg.schedule, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut trainer = DenoiserTrainer::new(denoiser, cfg.denoiser_train.clone(), seed)?;
    let report = trainer.train(&codec, &train, &backend, |s| {
        if let Some(p) = s.probe_loss {
            println!("step {:>6} loss {:.5} probe {:.5}", s.step, s.loss, p);
        }
    })?;
    save_denoiser(&common.out.join("denoiser.bin"), &trainer.denoiser, &info(&setup, report.steps_run))?;
    write_json(&common.out.join("denoiser_report.json"), &report)?;
    println!(
        "denoiser: {} steps, probe loss {:.5} -> {:.5}",
        report.steps_run, report.initial_probe_loss, report.final_probe_loss
    );
    Ok(())
}

pub struct SampleArgs {
    pub data: PathBuf,
    pub split: String,
    pub codec: PathBuf,
    pub denoiser: PathBuf,
    pub i2e: Option<PathBuf>,
    pub sampler: Option<SamplerKind>,
    pub steps: Option<usize>,
    pub hints: Option<HintSource>,
    pub mode: Option<HintMode>,
}

pub fn sample(common: &Common, args: &SampleArgs) -> Result<()> {
    let setup = setup(common)?;
    let cfg = &setup.config;
    let kind = args.sampler.unwrap_or(cfg.sampler.kind);
    let steps = args.steps.unwrap_or(cfg.sampler.steps);
    if kind.is_ddim() && (steps == 0 || steps > cfg.schedule.steps) {
        return Err(Error::Config(format!("--steps must lie in 1..={}", cfg.schedule.steps)));
    }
    let mode = args.mode.unwrap_or(cfg.sampler.mode);
    let items = triplets(&args.data, &args.split)?;
    let (codec, cinfo) = load_codec::<F>(&args.codec)?;
    let (denoiser, dinfo) = load_denoiser::<F>(&args.denoiser)?;
    check_config_hash(&cinfo, &setup.hash)?;
    check_config_hash(&dinfo, &setup.hash)?;
    let models = Models::new(&codec, &denoiser)?;
    let backend = backend(&setup, args.hints, args.i2e.as_deref())?;
    let seed = common.seed.unwrap_or(cfg.seeds.sample);
    for t in &items {
        let out = run_sampler(&t.prev, &t.next, &models, kind, steps, &backend, mode, seed ^ t.id)?;
        let name = format!("{:06}", t.id);
        write_png(&common.out.join(format!("{name}.png")), &out.image)?;
        fs::write(common.out.join(format!("{name}.manifest.json")), out.manifest.to_json()?)?;
    }
    println!("wrote {} frames sampled with {kind} to {}", items.len(), common.out.display());
    Ok(())
}

pub fn eval(common: &Common, pred: &Path, target: &Path) -> Result<()> {
    setup(common)?;
    let report = evaluate_dirs(pred, target)?;
    fs::write(common.out.join("report.json"), report.to_json()?)?;
    println!(
        "{} frames: psnr {:.3} dB, ssim {:.4}, l1 {:.4}",
        report.count, report.mean.psnr, report.mean.ssim, report.mean.l1
    );
    Ok(())
}

pub fn ablate(common: &Common) -> Result<()> {
    let setup = setup(common)?;
    let cfg = &setup.config;
    let seed = common.seed.unwrap_or(cfg.seeds.data);
    let d = &cfg.dataset;
    let train = generate_synthetic::<F>(&d.synthetic, None, 0, d.train_count, seed)?;
    let eval = generate_synthetic::<F>(&d.synthetic, Some(cfg.ablation.tier), d.eval_first_id(), cfg.ablation.eval_count, seed)?;
    let matrix = Cell::matrix(cfg.ablation.include_global, cfg.ablation.include_flow);
    let variants = train_variants(cfg, &matrix, &train, &cfg.ablation.seeds, |m| println!("{m}"))?;
    let report = run_ablation(cfg, &matrix, &eval, &cfg.ablation.seeds, &variants)?;
    fs::write(common.out.join("ablation.json"), report.to_json()?)?;
    for s in &report.summary {
        println!("{:<12} psnr {:>7.3}  ssim {:.4}  l1 {:.4}", s.cell.name(), s.median_psnr, s.median_ssim, s.median_l1);
    }
    Ok(())
}
