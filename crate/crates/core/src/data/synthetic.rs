use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_tensor::Scalar;

use super::FrameTriplet;
use crate::error::{Error, Result};
use crate::image::Image;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionTier {
    Easy,
    Medium,
    Hard,
}

impl MotionTier {
    pub const ALL: [MotionTier; 3] = [MotionTier::Easy, MotionTier::Medium, MotionTier::Hard];

    pub fn name(self) -> &'static str {
        match self {
            MotionTier::Easy => "easy",
            MotionTier::Medium => "medium",
            MotionTier::Hard => "hard",
        }
    }
}

impl fmt::Display for MotionTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionTier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion tier {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
}

/// Sinusoidal texture in shape-local coordinates, one base value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: Vec<f64>,
    pub amplitude: f64,
    pub freq: (f64, f64),
    pub phase: f64,
}

impl Texture {
    pub fn flat(base: Vec<f64>) -> Self {
        Self { base, amplitude: 0.0, freq: (0.0, 0.0), phase: 0.0 }
    }

    fn eval(&self, c: usize, ly: f64, lx: f64) -> f64 {
        self.base[c] + self.amplitude * (self.freq.0 * ly + self.freq.1 * lx + self.phase + c as f64).sin()
    }
}

/// A shape at its middle-frame position; `velocity` is the `prev -> next`
/// displacement `(vy, vx)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Half extent (square) or radius (disc).
    pub size: f64,
    pub velocity: (f64, f64),
    pub texture: Texture,
}

impl ShapeSpec {
    fn covers(&self, center: (f64, f64), py: f64, px: f64) -> bool {
        let (dy, dx) = (py - center.0, px - center.1);
        match self.kind {
            ShapeKind::Square => dy.abs() <= self.size && dx.abs() <= self.size,
            ShapeKind::Disc => dy * dy + dx * dx <= self.size * self.size,
        }
    }
}

/// Static background: base level plus a faint sinusoid, never below 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub background: Background,
    /// Painted in order; later shapes occlude earlier ones.
    pub shapes: Vec<ShapeSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.channels, 1 | 3) || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("bad canvas {}x{}x{}", self.channels, self.height, self.width)));
        }
        if self.background.texture.base.len() != self.channels {
            return Err(Error::Config("background needs one base value per channel".into()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if 2.0 * s.size > self.height.min(self.width) as f64 {
                return Err(Error::Config(format!("shape {i} of size {} does not fit the canvas", s.size)));
            }
            if s.texture.base.len() != self.channels {
                return Err(Error::Config(format!("shape {i} needs one base value per channel")));
            }
            if s.velocity.0.abs() > self.height as f64 || s.velocity.1.abs() > self.width as f64 {
                return Err(Error::Config(format!("shape {i} moves further than the canvas")));
            }
        }
        Ok(())
    }

    /// Renders the scene at time `tau` in `[-1/2, 1/2]` (prev, mid, next at -1/2, 0, 1/2).
    pub fn render<S: Scalar>(&self, tau: f64) -> Image<S> {
        let (c, h, w) = (self.channels, self.height, self.width);
        let centers: Vec<(f64, f64)> = self
            .shapes
            .iter()
            .map(|s| (s.center.0 + tau * s.velocity.0, s.center.1 + tau * s.velocity.1))
            .collect();
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        let mut data = vec![S::zero(); c * h * w];
        let mut acc = vec![0.0; c];
        for y in 0..h {
            for x in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for sy in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let top = self.shapes.iter().zip(&centers).rev().find(|(s, &ctr)| s.covers(ctr, py, px));
                        for (ch, a) in acc.iter_mut().enumerate() {
                            *a += match top {
                                Some((s, &ctr)) => s.texture.eval(ch, py - ctr.0, px - ctr.1),
                                None => self.background.texture.eval(ch, py, px).max(0.1),
                            };
                        }
                    }
                }
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = S::of((acc[ch] / n).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(c, h, w, data).expect("non-empty canvas")
    }

    pub fn triplet<S: Scalar>(&self, id: u64) -> Result<FrameTriplet<S>> {
        self.validate()?;
        let motion = self.shapes.iter().map(|s| s.velocity.0.hypot(s.velocity.1)).fold(0.0, f64::max);
        FrameTriplet::new(id, self.render(-0.5), self.render(0.0), self.render(0.5), motion)
    }
}

/// Distribution of random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Speed range `[lo, hi)` in pixels per `prev -> next` span, per tier.
    pub easy_speed: (f64, f64),
    pub medium_speed: (f64, f64),
    pub hard_speed: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            min_shapes: 1,
            max_shapes: 3,
            easy_speed: (0.0, 4.0),
            medium_speed: (4.0, 8.0),
            hard_speed: (8.0, 14.0),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || !matches!(self.channels, 1 | 3) {
            return Err(Error::Config("synthetic canvas must be at least 8x8 with 1 or 3 channels".into()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::Config("need 1 <= min_shapes <= max_shapes".into()));
        }
        for (lo, hi) in [self.easy_speed, self.medium_speed, self.hard_speed] {
            if !(0.0 <= lo && lo <= hi) || hi > self.height.min(self.width) as f64 / 2.0 {
                return Err(Error::Config(format!("speed range ({lo}, {hi}) must be ordered and below half the canvas")));
            }
        }
        Ok(())
    }

    pub fn speed_range(&self, tier: MotionTier) -> (f64, f64) {
        match tier {
            MotionTier::Easy => self.easy_speed,
            MotionTier::Medium => self.medium_speed,
            MotionTier::Hard => self.hard_speed,
        }
    }

    /// Random scene of the given tier.
    pub fn sample_scene<R: Rng + ?Sized>(&self, tier: MotionTier, rng: &mut R) -> SceneSpec {
        let (h, w, c) = (self.height as f64, self.width as f64, self.channels);
        let side = h.min(w);
        let colour = |rng: &mut R, lo: f64, hi: f64| -> Vec<f64> {
            let grey = rng.random_range(lo..hi);
            (0..c).map(|_| if c == 1 { grey } else { rng.random_range(lo..hi) }).collect()
        };
        let background = Background {
            texture: Texture {
                base: colour(rng, 0.15, 0.45),
                amplitude: rng.random_range(0.0..0.05),
                freq: (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            },
        };
        let count = rng.random_range(self.min_shapes..=self.max_shapes);
        let (lo, hi) = self.speed_range(tier);
        let shapes = (0..count)
            .map(|_| {
                let size = rng.random_range(side / 10.0..side / 5.0);
                let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let velocity = (speed * angle.sin(), speed * angle.cos());
                let margin_y = size + velocity.0.abs() / 2.0;
                let margin_x = size + velocity.1.abs() / 2.0;
                let cy = if h > 2.0 * margin_y { rng.random_range(margin_y..h - margin_y) } else { h / 2.0 };
                let cx = if w > 2.0 * margin_x { rng.random_range(margin_x..w - margin_x) } else { w / 2.0 };
                ShapeSpec {
                    kind: if rng.random_bool(0.5) { ShapeKind::Square } else { ShapeKind::Disc },
                    center: (cy, cx),
                    size,
                    velocity,
                    texture: Texture {
                        base: colour(rng, 0.5, 0.85),
                        amplitude: rng.random_range(0.05..0.15),
                        freq: (rng.random_range(0.3..1.2), rng.random_range(0.3..1.2)),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    },
                }
            })
            .collect();
        SceneSpec { height: self.height, width: self.width, channels: self.channels, background, shapes }
    }
}

/// Per-item seed so any id range can be regenerated independently.
fn item_seed(seed: u64, id: u64) -> u64 {
    seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `count` triplets with ids `first_id..first_id + count`; `tier = None`
/// cycles easy, medium, hard.
pub fn generate_synthetic<S: Scalar>(
    config: &SyntheticConfig,
    tier: Option<MotionTier>,
    first_id: u64,
    count: usize,
    seed: u64,
) -> Result<Vec<FrameTriplet<S>>> {
    config.validate()?;
    (0..count as u64)
        .map(|k| {
            let id = first_id + k;
            let tier = tier.unwrap_or(MotionTier::ALL[(id % 3) as usize]);
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, id));
            config.sample_scene(tier, &mut rng).triplet(id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_scene(velocity: (f64, f64)) -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 24,
            channels: 1,
            background: Background { texture: Texture::flat(vec![0.2]) },
            shapes: vec![ShapeSpec {
                kind: ShapeKind::Square,
                center: (8.0, 10.3),
                size: 3.7,
                velocity,
                texture: Texture { base: vec![0.7], amplitude: 0.1, freq: (0.9, 0.6), phase: 0.4 },
            }],
        }
    }

    #[test]
    fn still_scene_repeats() {
        let t = square_scene((0.0, 0.0)).triplet::<f64>(0).unwrap();
        assert_eq!(t.prev, t.mid);
        assert_eq!(t.mid, t.next);
    }

    #[test]
    fn integer_motion_is_exact_translation() {
        let t = square_scene((0.0, 2.0)).triplet::<f64>(0).unwrap();
        for y in 0..16 {
            for x in 1..24 {
                assert_eq!(t.mid.at(0, y, x), t.prev.at(0, y, x - 1));
            }
        }
        assert_eq!(t.motion, 2.0);
    }

    #[test]
    fn oversized_shape_rejected() {
        let mut s = square_scene((0.0, 0.0));
        s.shapes[0].size = 9.0;
        assert!(s.triplet::<f64>(0).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SyntheticConfig { height: 16, width: 16, hard_speed: (4.0, 6.0), medium_speed: (2.0, 4.0), easy_speed: (0.0, 2.0), ..SyntheticConfig::default() };
        let a = generate_synthetic::<f32>(&cfg, None, 10, 4, 3).unwrap();
        let b = generate_synthetic::<f32>(&cfg, None, 10, 4, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic::<f32>(&cfg, None, 12, 2, 3).unwrap();
        assert_eq!(&a[2..], &c[..]);
        let hard = generate_synthetic::<f32>(&cfg, Some(MotionTier::Hard), 0, 5, 3).unwrap();
        assert!(hard.iter().all(|t| t.motion >= 4.0 && t.motion < 6.0));
        assert!(hard.iter().all(|t| t.prev.data().iter().all(|&v| v >= 0.1 - 1e-6)));
    }
}
