//! Separable Gaussian blur and the deblur training pair.

use crate::error::{param_err, Result};
use crate::image::ImageBuffer;

/// Standard deviation implied by an odd kernel size.
pub fn sigma_for_kernel(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

fn check_kernel(k: usize, axis: &str) -> Result<()> {
    if k >= 3 && k % 2 == 1 {
        Ok(())
    } else {
        Err(param_err!("{axis} kernel size must be odd and >= 3, got {k}"))
    }
}

/// Normalized 1-D Gaussian taps of length `k`.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    check_kernel(k, "gaussian")?;
    let sigma = sigma_for_kernel(k);
    let radius = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 - radius;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Reflect-101 border index (`dcb|abcd|cba`).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Gaussian blur with a `k1`-tap horizontal and `k2`-tap vertical kernel.
pub fn gaussian_blur(img: &ImageBuffer, k1: usize, k2: usize) -> Result<ImageBuffer> {
    check_kernel(k1, "horizontal")?;
    check_kernel(k2, "vertical")?;
    let kx = gaussian_kernel(k1)?;
    let ky = gaussian_kernel(k2)?;
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let src = img.data();

    let rx = (k1 / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, weight) in kx.iter().enumerate() {
                    let cc = reflect101(c as isize + t as isize - rx, w);
                    acc += weight * src[(r * w + cc) * ch + k];
                }
                tmp[(r * w + c) * ch + k] = acc;
            }
        }
    }

    let ry = (k2 / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, weight) in ky.iter().enumerate() {
                    let rr = reflect101(r as isize + t as isize - ry, h);
                    acc += weight * tmp[(rr * w + c) * ch + k];
                }
                out[(r * w + c) * ch + k] = acc;
            }
        }
    }
    Ok(img.with_data(out))
}

/// Returns `(original, transformed)` for a deblur sample: the blurred image
/// plays the original, the sharp input plays the transformed image.
pub fn make_deblur_pair(img: &ImageBuffer, k1: usize, k2: usize) -> Result<(ImageBuffer, ImageBuffer)> {
    Ok((gaussian_blur(img, k1, k2)?, img.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_formula() {
        assert!((sigma_for_kernel(3) - 0.8).abs() < 1e-15);
        assert!((sigma_for_kernel(5) - 1.1).abs() < 1e-15);
        assert!((sigma_for_kernel(11) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kernel3_matches_direct_evaluation() {
        // exp(-1 / (2 * 0.8^2)) evaluated independently
        let side = (-1.0f64 / 1.28).exp();
        let norm = 1.0 + 2.0 * side;
        let k = gaussian_kernel(3).unwrap();
        assert!((k[0] - side / norm).abs() < 1e-15);
        assert!((k[1] - 1.0 / norm).abs() < 1e-15);
        assert!((k[0] - 0.23899).abs() < 1e-5 && (k[1] - 0.52201).abs() < 1e-5);
    }

    #[test]
    fn kernels_sum_to_one() {
        for k in (3..=15).step_by(2) {
            let s: f64 = gaussian_kernel(k).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let img = ImageBuffer::filled(4, 4, 1, 0.5).unwrap();
        assert!(gaussian_blur(&img, 4, 5).is_err());
        assert!(gaussian_blur(&img, 3, 1).is_err());
        assert!(make_deblur_pair(&img, 2, 3).is_err());
    }

    #[test]
    fn reflect101_indices() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(-7, 3), 1);
        assert_eq!(reflect101(3, 1), 0);
    }

    #[test]
    fn constant_image_is_fixed() {
        let img = ImageBuffer::filled(6, 7, 3, 0.42).unwrap();
        let out = gaussian_blur(&img, 9, 11).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-12));
        let (orig, trans) = make_deblur_pair(&img, 3, 5).unwrap();
        assert_eq!(trans, img);
        assert_eq!(orig, gaussian_blur(&img, 3, 5).unwrap());
    }
}
