//! Baseline and motion-aware reverse diffusion, manifests and the ablation driver.

mod ablation;
mod manifest;
mod sampler;

pub use manifest::{
    digest_values, image_digest, params_digest, BackendEcho, HintMode, HintTraceEntry, SampleManifest, SamplerKind,
    MANIFEST_VERSION,
};
pub use sampler::{
    ma_sample, ma_sample_ddim, replay, sample, sample_baseline, sample_refine_decode, Models, SampleOutput,
};
pub use ablation::{
    ablation_backend, median, run_ablation, run_cell, train_variants, AblationReport, AblationRun, Cell, CellSummary,
    CodecKey, VariantKey, Variants,
};
