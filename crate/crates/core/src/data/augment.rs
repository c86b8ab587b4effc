use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfi_tensor::Scalar;

use super::FrameTriplet;
use crate::error::{Error, Result};
use crate::image::Image;

/// One draw of the augmentation randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub top: usize,
    pub left: usize,
    pub crop: usize,
    pub flip_h: bool,
    pub flip_v: bool,
    pub reverse: bool,
}

impl AugmentDraw {
    /// `crop == 0` keeps the full frame (which must then be square for any crop).
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, crop: usize, rng: &mut R) -> Result<Self> {
        if crop > height || crop > width {
            return Err(Error::Config(format!("crop {crop} exceeds frame {height}x{width}")));
        }
        let (top, left) = if crop == 0 {
            (0, 0)
        } else {
            (rng.random_range(0..=height - crop), rng.random_range(0..=width - crop))
        };
        Ok(Self { top, left, crop, flip_h: rng.random(), flip_v: rng.random(), reverse: rng.random() })
    }

    fn frame<S: Scalar>(&self, im: &Image<S>) -> Image<S> {
        let (c, h, w) = im.dims();
        let (oh, ow) = if self.crop == 0 { (h, w) } else { (self.crop, self.crop) };
        let mut data = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let sy = self.top + if self.flip_v { oh - 1 - y } else { y };
                for x in 0..ow {
                    let sx = self.left + if self.flip_h { ow - 1 - x } else { x };
                    data.push(im.at(ch, sy, sx));
                }
            }
        }
        Image::new(c, oh, ow, data).expect("non-empty crop")
    }

    /// Crops and flips the three frames identically, then optionally swaps
    /// `prev` and `next`.
    pub fn apply<S: Scalar>(&self, t: &FrameTriplet<S>) -> FrameTriplet<S> {
        let (prev, mid, next) = (self.frame(&t.prev), self.frame(&t.mid), self.frame(&t.next));
        let (prev, next) = if self.reverse { (next, prev) } else { (prev, next) };
        FrameTriplet { id: t.id, prev, mid, next, motion: t.motion }
    }
}

/// Random shared crop, independent horizontal/vertical flips and temporal reversal.
pub fn augment<S: Scalar>(t: &FrameTriplet<S>, crop: usize, seed: u64) -> Result<FrameTriplet<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, h, w) = t.dims();
    Ok(AugmentDraw::sample(h, w, crop, &mut rng)?.apply(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet() -> FrameTriplet<f64> {
        let im = |o: f64| Image::new(1, 4, 6, (0..24).map(|i| (i as f64 + o) / 40.0).collect()).unwrap();
        FrameTriplet::new(7, im(0.0), im(5.0), im(10.0), 1.0).unwrap()
    }

    #[test]
    fn reversal_is_an_involution() {
        let t = triplet();
        let draw = AugmentDraw { top: 0, left: 0, crop: 0, flip_h: false, flip_v: false, reverse: true };
        assert_eq!(draw.apply(&draw.apply(&t)), t);
        let flips = AugmentDraw { flip_h: true, flip_v: true, ..draw };
        assert_eq!(flips.apply(&flips.apply(&t)), t);
    }

    #[test]
    fn frames_stay_co_registered() {
        let t = triplet();
        let draw = AugmentDraw { top: 1, left: 2, crop: 3, flip_h: true, flip_v: false, reverse: false };
        let a = draw.apply(&t);
        assert_eq!(a.mid.dims(), (1, 3, 3));
        for i in 0..9 {
            assert!((a.mid.data()[i] - a.prev.data()[i] - 5.0 / 40.0).abs() < 1e-12);
            assert!((a.next.data()[i] - a.mid.data()[i] - 5.0 / 40.0).abs() < 1e-12);
        }
        assert_eq!(a.prev.at(0, 0, 0), t.prev.at(0, 1, 4));
    }

    #[test]
    fn reversal_rate_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let hits = (0..n).filter(|_| AugmentDraw::sample(8, 8, 4, &mut rng).unwrap().reverse).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn oversized_crop_fails() {
        assert!(augment(&triplet(), 5, 0).is_err());
        assert!(augment(&triplet(), 4, 0).is_ok());
    }
}
