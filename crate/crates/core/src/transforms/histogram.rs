//! Histogram-based operations: auto contrast, equalization, posterization.

use crate::error::{param_err, Result};
use crate::image::{quantize, ImageBuffer};

/// Per channel, stretches `[min, max]` onto `[0, 1]`. Constant channels are
/// left alone.
pub fn auto_contrast(img: &ImageBuffer) -> ImageBuffer {
    let ch = img.channels();
    let mut lo = vec![f64::INFINITY; ch];
    let mut hi = vec![f64::NEG_INFINITY; ch];
    for px in img.data().chunks_exact(ch) {
        for k in 0..ch {
            lo[k] = lo[k].min(px[k]);
            hi[k] = hi[k].max(px[k]);
        }
    }
    let mut data = img.data().to_vec();
    for px in data.chunks_exact_mut(ch) {
        for k in 0..ch {
            if hi[k] > lo[k] {
                px[k] = (px[k] - lo[k]) / (hi[k] - lo[k]);
            }
        }
    }
    img.with_data(data)
}

/// Lookup table for classical histogram equalization of one 8-bit channel.
pub(crate) fn equalize_lut(values: impl Iterator<Item = u8>) -> [u8; 256] {
    let mut hist = [0usize; 256];
    let mut total = 0usize;
    for v in values {
        hist[v as usize] += 1;
        total += 1;
    }
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = i as u8;
    }
    let cdf_min = hist.iter().copied().find(|&n| n > 0).unwrap_or(0);
    if total == cdf_min {
        // zero or one distinct level
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0usize;
    for (v, &n) in hist.iter().enumerate() {
        cdf += n;
        if n > 0 {
            lut[v] = (255.0 * (cdf - cdf_min) as f64 / denom).round() as u8;
        }
    }
    lut
}

/// Per-channel histogram equalization on the 8-bit view.
pub fn equalize(img: &ImageBuffer) -> ImageBuffer {
    let ch = img.channels();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let luts: Vec<[u8; 256]> = (0..ch)
        .map(|k| equalize_lut(bytes.iter().skip(k).step_by(ch).copied()))
        .collect();
    let data = bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| f64::from(luts[i % ch][b as usize]) / 255.0)
        .collect();
    img.with_data(data)
}

/// Keeps the `n` most significant bits of every 8-bit value.
pub fn posterize(img: &ImageBuffer, n: u8) -> Result<ImageBuffer> {
    if !(1..=6).contains(&n) {
        return Err(param_err!("posterize bits must be in 1..=6, got {n}"));
    }
    Ok(posterize_bits(img, n))
}

pub(crate) fn posterize_bits(img: &ImageBuffer, n: u8) -> ImageBuffer {
    let mask = 0xFFu8 << (8 - n);
    let data = img.data().iter().map(|&v| f64::from(quantize(v) & mask) / 255.0).collect();
    img.with_data(data)
}
