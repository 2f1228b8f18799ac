//! Factor-controlled enhancements.
//!
//! Each one blends between a degenerate image and the input:
//! `out = degenerate·(1 − c) + img·c`, so `c = 1` returns the input bit for
//! bit and `c = 0` returns the degenerate image.

use crate::error::{param_err, Result};
use crate::image::{hsv_to_rgb_pixel, luma, rgb_to_hsv_pixel, ImageBuffer};

fn check_factor(c: f64, what: &str) -> Result<()> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(param_err!("{what} factor must be finite and non-negative, got {c}"))
    }
}

#[inline]
fn blend(degenerate: f64, value: f64, c: f64) -> f64 {
    degenerate * (1.0 - c) + value * c
}

/// Scales every value by `c`; the degenerate image is black.
pub fn adjust_brightness(img: &ImageBuffer, c: f64) -> Result<ImageBuffer> {
    check_factor(c, "brightness")?;
    Ok(img.map_clamped(|v| blend(0.0, v, c)))
}

/// Mean luminance of the whole image (the plain mean for 1-channel images).
pub fn mean_luminance(img: &ImageBuffer) -> f64 {
    let n = img.pixel_count().max(1) as f64;
    if img.channels() == 3 {
        img.data().chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).sum::<f64>() / n
    } else {
        img.data().iter().sum::<f64>() / n
    }
}

/// Blends toward a uniform image at the mean luminance.
pub fn adjust_contrast(img: &ImageBuffer, c: f64) -> Result<ImageBuffer> {
    check_factor(c, "contrast")?;
    let mu = mean_luminance(img);
    Ok(img.map_clamped(|v| blend(mu, v, c)))
}

/// Rotates hue by `c − 1` full turns.
pub fn adjust_hue(img: &ImageBuffer, c: f64) -> Result<ImageBuffer> {
    img.ensure_rgb("hue adjustment")?;
    if !c.is_finite() {
        return Err(param_err!("hue factor must be finite, got {c}"));
    }
    if c == 1.0 {
        return Ok(img.clone());
    }
    let shift = c - 1.0;
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.data().chunks_exact(3) {
        let (h, s, v) = rgb_to_hsv_pixel(p[0], p[1], p[2]);
        let (r, g, b) = hsv_to_rgb_pixel((h + shift).rem_euclid(1.0), s, v);
        data.extend_from_slice(&[r, g, b]);
    }
    Ok(img.with_data(data))
}

/// Blends toward the per-pixel luminance.
pub fn adjust_saturation(img: &ImageBuffer, c: f64) -> Result<ImageBuffer> {
    img.ensure_rgb("saturation adjustment")?;
    check_factor(c, "saturation")?;
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.data().chunks_exact(3) {
        let gray = luma(p[0], p[1], p[2]);
        data.extend(p.iter().map(|&v| blend(gray, v, c)));
    }
    Ok(img.with_data(data))
}

/// The 3×3 `[[1,1,1],[1,5,1],[1,1,1]] / 13` smoothing filter; border pixels
/// are copied through.
pub fn smooth(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut data = img.data().to_vec();
    if h < 3 || w < 3 {
        return img.clone();
    }
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            for k in 0..ch {
                let mut acc = 0.0;
                for dr in 0..3 {
                    for dc in 0..3 {
                        let weight = if dr == 1 && dc == 1 { 5.0 } else { 1.0 };
                        acc += weight * img.get(r + dr - 1, c + dc - 1, k);
                    }
                }
                data[(r * w + c) * ch + k] = acc / 13.0;
            }
        }
    }
    img.with_data(data)
}

/// Blends toward the smoothed image; `c > 1` sharpens.
pub fn adjust_sharpness(img: &ImageBuffer, c: f64) -> Result<ImageBuffer> {
    check_factor(c, "sharpness")?;
    let soft = smooth(img);
    let data = soft.data().iter().zip(img.data()).map(|(&s, &v)| blend(s, v, c)).collect();
    Ok(img.with_data(data))
}
