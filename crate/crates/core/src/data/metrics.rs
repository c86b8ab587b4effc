use vfi_tensor::Scalar;

use crate::error::Result;
use crate::image::Image;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean absolute error.
pub fn l1<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / n)
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filter of one plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
///
/// Only windows that fit entirely inside the image are scored. Frames smaller
/// than 11 pixels use the largest odd window that fits.
pub fn ssim<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    a.same_shape(b)?;
    let (c, h, w) = a.dims();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size.max(1));
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = b.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter(&x, h, w, &k);
        let (my, ..) = filter(&y, h, w, &k);
        let (sxx, ..) = filter(&xx, h, w, &k);
        let (syy, ..) = filter(&yy, h, w, &k);
        let (sxy, ..) = filter(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use vfi_tensor::Tensor;

    fn noise(seed: u64, c: usize, h: usize, w: usize) -> Image<f64> {
        let t = Tensor::<f64>::uniform(&[c * h * w], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| v * 0.5 + 0.5);
        Image::new(c, h, w, t.into_data()).unwrap()
    }

    #[test]
    fn identical_images_hit_the_sentinels() {
        let a = noise(0, 3, 32, 32);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = Image::filled(1, 16, 16, 0.3f64);
        let b = Image::filled(1, 16, 16, 0.4f64);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!((l1(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let a = noise(1, 1, 24, 20);
        let b = noise(2, 1, 24, 20);
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-10);
        assert!(ab < 0.5 && ab > -1.0);
    }

    #[test]
    fn ssim_of_a_constant_pair() {
        // Flat images reduce to the luminance term.
        let a = Image::filled(1, 16, 16, 0.5f64);
        let b = Image::filled(1, 16, 16, 0.6f64);
        let expect = (2.0 * 0.5 * 0.6 + C1) / (0.25 + 0.36 + C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn small_frames_use_a_smaller_window() {
        let a = noise(3, 1, 6, 8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Image::filled(1, 8, 8, 0.5f64);
        let b = Image::filled(1, 8, 9, 0.5f64);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }
}
