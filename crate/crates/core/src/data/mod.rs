//! Datasets, metrics, configuration and on-disk formats.

mod augment;
mod config;
mod container;
mod io;
mod metrics;
mod report;
mod synthetic;
mod triplet;

pub use augment::{augment, AugmentDraw};
pub use container::{ArrayFile, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use config::{AblationConfig, DatasetConfig, HintConfig, RunConfig, SamplerConfig, SeedConfig};
pub use io::{list_frames, load_split, read_png, save_split, write_png, TripletMeta, FRAME_NAMES, META_FILE};
pub use report::{evaluate_dirs, EvalItem, EvalReport, MetricSummary};
pub use metrics::{l1, mse, psnr, ssim, PSNR_CAP};
pub use synthetic::{
    generate_synthetic, Background, MotionTier, SceneSpec, ShapeKind, ShapeSpec, SyntheticConfig, Texture,
};
pub use triplet::FrameTriplet;
