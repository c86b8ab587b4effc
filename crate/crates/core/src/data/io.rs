use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};
use serde::{Deserialize, Serialize};
use vfi_tensor::Scalar;

use super::{FrameTriplet, MotionTier};
use crate::error::{Error, Result};
use crate::image::Image;

pub const FRAME_NAMES: [&str; 3] = ["prev", "mid", "next"];
pub const META_FILE: &str = "meta.json";

/// Writes an 8-bit grayscale or RGB PNG; values are clamped to [0, 1] and rounded.
pub fn write_png<S: Scalar>(path: &Path, image: &Image<S>) -> Result<()> {
    let (c, h, w) = image.dims();
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        _ => return Err(Error::Image(format!("cannot store {c} channels as PNG"))),
    };
    let mut bytes = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = image.at(ch, y, x).as_f64().clamp(0.0, 1.0);
                bytes[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer.write_image_data(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer.finish().map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads a PNG into [0, 1]; alpha is dropped and 16-bit samples are truncated to 8.
pub fn read_png<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let bad = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (stride, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        other => return Err(Error::Image(format!("{}: unsupported color type {other:?}", path.display()))),
    };
    let mut data = vec![S::zero(); keep * h * w];
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            for ch in 0..keep {
                data[(ch * h + y) * w + x] = S::of(row[x * stride + ch] as f64 / 255.0);
            }
        }
    }
    Image::new(keep, h, w, data)
}

/// Sidecar stored next to each triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletMeta {
    pub id: u64,
    pub motion: f64,
    #[serde(default)]
    pub tier: Option<MotionTier>,
}

fn item_dir(root: &Path, split: &str, id: u64) -> PathBuf {
    root.join(split).join(format!("{id:06}"))
}

/// Writes `root/split/<id>/{prev,mid,next}.png` plus the meta sidecar.
pub fn save_split<S: Scalar>(
    root: &Path,
    split: &str,
    triplets: &[FrameTriplet<S>],
    tier: impl Fn(u64) -> Option<MotionTier>,
) -> Result<()> {
    for t in triplets {
        let dir = item_dir(root, split, t.id);
        fs::create_dir_all(&dir)?;
        for (name, im) in FRAME_NAMES.iter().zip([&t.prev, &t.mid, &t.next]) {
            write_png(&dir.join(format!("{name}.png")), im)?;
        }
        let meta = TripletMeta { id: t.id, motion: t.motion, tier: tier(t.id) };
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(())
}

/// Reads every triplet under `root/split`, sorted by id.
pub fn load_split<S: Scalar>(root: &Path, split: &str) -> Result<Vec<(FrameTriplet<S>, TripletMeta)>> {
    let base = root.join(split);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&base)
        .map_err(|e| Error::Config(format!("cannot read split {}: {e}", base.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let meta: TripletMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let [prev, mid, next] = FRAME_NAMES.map(|n| read_png::<S>(&dir.join(format!("{n}.png"))));
        out.push((FrameTriplet::new(meta.id, prev?, mid?, next?, meta.motion)?, meta));
    }
    out.sort_by_key(|(t, _)| t.id);
    Ok(out)
}

/// Frames keyed by name in a prediction or target directory.
///
/// Accepts either flat `<name>.png` files or `<name>/mid.png` item folders.
pub fn list_frames(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_dir() && path.join("mid.png").is_file() {
            out.push((name_of(&path), path.join("mid.png")));
        } else if path.extension().is_some_and(|e| e == "png") {
            out.push((name_of(&path.with_extension("")), path));
        }
    }
    out.sort();
    Ok(out)
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let data: Vec<f64> = (0..c * 5 * 7).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
            let im = Image::new(c, 5, 7, data).unwrap();
            let p = dir.path().join(format!("c{c}.png"));
            write_png(&p, &im).unwrap();
            let back: Image<f64> = read_png(&p).unwrap();
            assert_eq!(back.dims(), im.dims());
            assert!(back.data().iter().zip(im.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_unsupported_channels() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_png(&dir.path().join("x.png"), &Image::filled(2, 4, 4, 0.5f32)).is_err());
    }

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig { height: 32, width: 32, ..SyntheticConfig::default() };
        let ts = generate_synthetic::<f32>(&cfg, Some(MotionTier::Hard), 4, 3, 9).unwrap();
        save_split(dir.path(), "eval", &ts, |_| Some(MotionTier::Hard)).unwrap();
        let back = load_split::<f32>(dir.path(), "eval").unwrap();
        assert_eq!(back.len(), 3);
        for ((t, meta), orig) in back.iter().zip(&ts) {
            assert_eq!(t.id, orig.id);
            assert_eq!(meta.tier, Some(MotionTier::Hard));
            assert!(t.mid.data().iter().zip(orig.mid.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
        }
        let frames = list_frames(&dir.path().join("eval")).unwrap();
        assert_eq!(frames.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(), ["000004", "000005", "000006"]);
        assert!(load_split::<f32>(dir.path(), "train").is_err());
    }
}
