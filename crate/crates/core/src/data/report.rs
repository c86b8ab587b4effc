use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{list_frames, read_png};
use super::metrics::{l1, psnr, ssim, PSNR_CAP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

/// Per-item and mean metrics. Identical frames score `psnr_cap` dB and SSIM 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_cap: f64,
    pub count: usize,
    pub mean: MetricSummary,
    pub items: Vec<EvalItem>,
}

impl EvalReport {
    pub fn from_items(items: Vec<EvalItem>) -> Self {
        let n = items.len().max(1) as f64;
        let mean = MetricSummary {
            psnr: items.iter().map(|i| i.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|i| i.ssim).sum::<f64>() / n,
            l1: items.iter().map(|i| i.l1).sum::<f64>() / n,
        };
        Self { psnr_cap: PSNR_CAP, count: items.len(), mean, items }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Scores every prediction against the target frame with the same name.
pub fn evaluate_dirs(pred: &Path, target: &Path) -> Result<EvalReport> {
    let targets = list_frames(target)?;
    let preds = list_frames(pred)?;
    if preds.is_empty() {
        return Err(Error::Config(format!("no frames in {}", pred.display())));
    }
    let mut items = Vec::with_capacity(preds.len());
    for (name, path) in preds {
        let tpath = targets
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config(format!("no target frame for {name}")))?;
        let a = read_png::<f64>(&path)?;
        let b = read_png::<f64>(tpath)?;
        items.push(EvalItem { id: name, psnr: psnr(&a, &b)?, ssim: ssim(&a, &b)?, l1: l1(&a, &b)? });
    }
    Ok(EvalReport::from_items(items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_png;
    use crate::image::Image;

    #[test]
    fn identical_dirs_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, v) in [0.2, 0.7].into_iter().enumerate() {
            let mut im = Image::filled(1, 12, 12, v);
            im.set(0, 3, 4, 1.0);
            write_png(&dir.path().join(format!("{i:06}.png")), &im).unwrap();
        }
        let report = evaluate_dirs(dir.path(), dir.path()).unwrap();
        assert_eq!(report.count, 2);
        assert_eq!(report.mean.psnr, PSNR_CAP);
        assert!((report.mean.ssim - 1.0).abs() < 1e-12);
        let back = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn missing_target_is_a_config_error() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_png(&a.path().join("x.png"), &Image::filled(1, 4, 4, 0.5f64)).unwrap();
        assert!(evaluate_dirs(a.path(), b.path()).unwrap_err().is_config());
        assert!(evaluate_dirs(b.path(), a.path()).unwrap_err().is_config());
    }
}
