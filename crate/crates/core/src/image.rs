//! Image and mask containers plus the handful of color helpers every other
//! module leans on.
//!
//! Pixel values live in `[0, 1]` as `f64`. The 0–255 integer scale only
//! appears at I/O boundaries ([`PixelU8View`]) and in the metrics.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};

/// BT.601 luma weights, used for every grayscale reduction.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An `height × width × channels` raster stored row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Wraps `data`, checking the length and that every value is finite and
    /// in `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(shape_err!("images have 1 or 3 channels, got {channels}"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(param_err!("pixel value {v} outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`ImageBuffer::new`] but clamps every value into `[0, 1]`
    /// (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp01(*v);
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.height,
                self.width,
                self.channels,
                other.height,
                other.width,
                other.channels
            ))
        }
    }

    pub(crate) fn ensure_rgb(&self, what: &str) -> Result<()> {
        if self.channels == 3 {
            Ok(())
        } else {
            Err(shape_err!("{what} needs a 3-channel image, got {} channel(s)", self.channels))
        }
    }

    /// Builds a same-shaped image by mapping every value, clamping the result.
    pub(crate) fn map_clamped(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    /// Replaces the data of a same-shaped image, clamping into range.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> ImageBuffer {
        debug_assert_eq!(data.len(), self.data.len());
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: data.into_iter().map(clamp01).collect(),
        }
    }

    /// Extracts one channel as a 1-channel image.
    pub fn channel(&self, channel: usize) -> Result<ImageBuffer> {
        if channel >= self.channels {
            return Err(shape_err!("channel {channel} out of range for {} channel(s)", self.channels));
        }
        let data = self.data.iter().skip(channel).step_by(self.channels).copied().collect();
        Ok(ImageBuffer {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        })
    }

    /// Nearest-neighbour resize. Only used for previews and toy data.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<ImageBuffer> {
        if height == 0 || width == 0 {
            return Err(shape_err!("cannot resize to {height}x{width}"));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                data.extend_from_slice(self.pixel(sr, sc));
            }
        }
        Ok(ImageBuffer {
            height,
            width,
            channels: self.channels,
            data,
        })
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// A binary `height × width` foreground mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(shape_err!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            ));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of pixels set.
    pub fn ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub(crate) fn ensure_matches(&self, img: &ImageBuffer) -> Result<()> {
        if self.height == img.height && self.width == img.width {
            Ok(())
        } else {
            Err(shape_err!(
                "mask is {}x{} but image is {}x{}",
                self.height,
                self.width,
                img.height,
                img.width
            ))
        }
    }
}

/// Integer view of an image on the 0–255 scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelU8View {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl PixelU8View {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(shape_err!("images have 1 or 3 channels, got {channels}"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "{height}x{width}x{channels} view needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// `round(v · 255)`, rounding halves away from zero.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

pub fn to_u8(img: &ImageBuffer) -> PixelU8View {
    PixelU8View {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img.data.iter().map(|&v| quantize(v)).collect(),
    }
}

pub fn from_u8(view: &PixelU8View) -> ImageBuffer {
    ImageBuffer {
        height: view.height,
        width: view.width,
        channels: view.channels,
        data: view.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
    }
}

/// Copy-and-paste compositing: foreground where the mask is set, background
/// elsewhere.
pub fn composite(foreground: &ImageBuffer, background: &ImageBuffer, mask: &ForegroundMask) -> Result<ImageBuffer> {
    foreground.ensure_same_shape(background)?;
    mask.ensure_matches(foreground)?;
    let ch = foreground.channels;
    let mut data = background.data.clone();
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        data[i * ch..(i + 1) * ch].copy_from_slice(&foreground.data[i * ch..(i + 1) * ch]);
    }
    Ok(ImageBuffer {
        height: background.height,
        width: background.width,
        channels: ch,
        data,
    })
}

/// Hexcone RGB → HSV. Hue is stored as a fraction of a full turn in `[0, 1)`;
/// achromatic pixels get hue 0.
pub fn rgb_to_hsv(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.ensure_rgb("rgb_to_hsv")?;
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (h, s, v) = rgb_to_hsv_pixel(px[0], px[1], px[2]);
        data.extend_from_slice(&[h, s, v]);
    }
    Ok(img.with_data(data))
}

pub fn hsv_to_rgb(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.ensure_rgb("hsv_to_rgb")?;
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = hsv_to_rgb_pixel(px[0], px[1], px[2]);
        data.extend_from_slice(&[r, g, b]);
    }
    Ok(img.with_data(data))
}

pub(crate) fn rgb_to_hsv_pixel(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let h = (sector / 6.0).rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    (if h >= 1.0 { 0.0 } else { h }, s, v)
}

pub(crate) fn hsv_to_rgb_pixel(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (v, v, v);
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[inline]
pub(crate) fn luma(r: f64, g: f64, b: f64) -> f64 {
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

/// Per-pixel BT.601 luminance as a 1-channel image.
pub fn luminance(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.ensure_rgb("luminance")?;
    let data = img.data.chunks_exact(3).map(|p| clamp01(luma(p[0], p[1], p[2]))).collect();
    Ok(ImageBuffer {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    })
}

/// A serializable `(height, width)` pair used in manifests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}
