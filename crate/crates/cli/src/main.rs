mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vfi_core::event_motion::HintSource;
use vfi_core::sampling::{HintMode, SamplerKind};

#[derive(Debug, Parser)]
#[command(name = "vfi", version, about = "Motion-hint conditioned latent diffusion for frame interpolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML, dotted keys allowed).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the seed this command draws from.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset into `<out>/{train,eval}`.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate events between two frames.
    SimulateEvents {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PNG")]
        prev: PathBuf,
        #[arg(long, value_name = "PNG")]
        next: PathBuf,
    },
    /// Train the autoencoder, and the learned event network when the config asks for it.
    TrainCodec {
        #[command(flatten)]
        common: Common,
        /// Dataset root written by `gen-data`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Train the noise predictor on latents of a trained codec.
    TrainDenoiser {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        codec: PathBuf,
        /// Learned event network, needed when hints come from it.
        #[arg(long, value_name = "PATH")]
        i2e: Option<PathBuf>,
    },
    /// Interpolate every triplet of a split.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, value_name = "PATH")]
        codec: PathBuf,
        #[arg(long, value_name = "PATH")]
        denoiser: PathBuf,
        #[arg(long, value_name = "PATH")]
        i2e: Option<PathBuf>,
        /// One of baseline-ddpm, baseline-ddim, ma-ddpm, ma-ddim.
        #[arg(long)]
        sampler: Option<SamplerKind>,
        #[arg(long, value_name = "S")]
        steps: Option<usize>,
        /// One of simulator, learned, flow, empty.
        #[arg(long)]
        hints: Option<HintSource>,
        /// Re-extract hints every step (dynamic) or once from the inputs (global).
        #[arg(long, value_parser = parse_mode)]
        mode: Option<HintMode>,
    },
    /// Score predictions against targets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        #[arg(long, value_name = "DIR")]
        target: PathBuf,
    },
    /// Train every ablation variant and evaluate the matrix.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> Result<HintMode, String> {
    match s {
        "dynamic" => Ok(HintMode::Dynamic),
        "global" => Ok(HintMode::Global),
        other => Err(format!("unknown hint mode {other:?}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::SimulateEvents { common, prev, next } => commands::simulate_events(&common, &prev, &next),
        Command::TrainCodec { common, data } => commands::train_codec(&common, &data),
        Command::TrainDenoiser { common, data, codec, i2e } => {
            commands::train_denoiser(&common, &data, &codec, i2e.as_deref())
        }
        Command::Sample { common, data, split, codec, denoiser, i2e, sampler, steps, hints, mode } => {
            commands::sample(&common, &commands::SampleArgs {
                data,
                split,
                codec,
                denoiser,
                i2e,
                sampler,
                steps,
                hints,
                mode,
            })
        }
        Command::Eval { common, pred, target } => commands::eval(&common, &pred, &target),
        Command::Ablate { common } => commands::ablate(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
