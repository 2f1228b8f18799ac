//! The ten photometric perturbations used to fabricate foreground mismatch,
//! their parameter presets, and seeded sampling of transform specs.

mod blur;
mod enhance;
mod histogram;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::image::ImageBuffer;

pub use blur::{gaussian_blur, gaussian_kernel, make_deblur_pair, sigma_for_kernel};
pub use enhance::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, adjust_sharpness, mean_luminance, smooth,
};
pub use histogram::{auto_contrast, equalize, posterize};

/// Transform families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Brightness,
    Contrast,
    Hue,
    Saturation,
    Sharpness,
    Blur,
    Deblur,
    AutoContrast,
    Equalize,
    Posterize,
}

impl TransformKind {
    pub const ALL: [TransformKind; 10] = [
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Hue,
        TransformKind::Saturation,
        TransformKind::Sharpness,
        TransformKind::Blur,
        TransformKind::Deblur,
        TransformKind::AutoContrast,
        TransformKind::Equalize,
        TransformKind::Posterize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Hue => "hue",
            TransformKind::Saturation => "saturation",
            TransformKind::Sharpness => "sharpness",
            TransformKind::Blur => "blur",
            TransformKind::Deblur => "deblur",
            TransformKind::AutoContrast => "auto_contrast",
            TransformKind::Equalize => "equalize",
            TransformKind::Posterize => "posterize",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Usage(format!("unknown transform `{s}`")))
    }
}

/// A fully parameterized transform; serializes as `{"kind": ..., params}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Brightness { c: f64 },
    Contrast { c: f64 },
    Hue { c: f64 },
    Saturation { c: f64 },
    Sharpness { c: f64 },
    Blur { k1: usize, k2: usize },
    Deblur { k1: usize, k2: usize },
    AutoContrast,
    Equalize,
    Posterize { n: u8 },
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Brightness { .. } => TransformKind::Brightness,
            TransformSpec::Contrast { .. } => TransformKind::Contrast,
            TransformSpec::Hue { .. } => TransformKind::Hue,
            TransformSpec::Saturation { .. } => TransformKind::Saturation,
            TransformSpec::Sharpness { .. } => TransformKind::Sharpness,
            TransformSpec::Blur { .. } => TransformKind::Blur,
            TransformSpec::Deblur { .. } => TransformKind::Deblur,
            TransformSpec::AutoContrast => TransformKind::AutoContrast,
            TransformSpec::Equalize => TransformKind::Equalize,
            TransformSpec::Posterize { .. } => TransformKind::Posterize,
        }
    }

    /// The enhancement factor, for the five factor-controlled kinds.
    pub fn factor(&self) -> Option<f64> {
        match *self {
            TransformSpec::Brightness { c }
            | TransformSpec::Contrast { c }
            | TransformSpec::Hue { c }
            | TransformSpec::Saturation { c }
            | TransformSpec::Sharpness { c } => Some(c),
            _ => None,
        }
    }

    /// Applies the photometric operation. `Deblur` returns the blurred image;
    /// use [`TransformSpec::apply_pair`] to get the deblur training pair.
    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        match *self {
            TransformSpec::Brightness { c } => adjust_brightness(img, c),
            TransformSpec::Contrast { c } => adjust_contrast(img, c),
            TransformSpec::Hue { c } => adjust_hue(img, c),
            TransformSpec::Saturation { c } => adjust_saturation(img, c),
            TransformSpec::Sharpness { c } => adjust_sharpness(img, c),
            TransformSpec::Blur { k1, k2 } | TransformSpec::Deblur { k1, k2 } => gaussian_blur(img, k1, k2),
            TransformSpec::AutoContrast => Ok(auto_contrast(img)),
            TransformSpec::Equalize => Ok(equalize(img)),
            TransformSpec::Posterize { n } => posterize(img, n),
        }
    }

    /// Returns `(original, transformed)`. For every kind but `Deblur` the
    /// original is the input itself.
    pub fn apply_pair(&self, img: &ImageBuffer) -> Result<(ImageBuffer, ImageBuffer)> {
        match *self {
            TransformSpec::Deblur { k1, k2 } => make_deblur_pair(img, k1, k2),
            _ => Ok((img.clone(), self.apply(img)?)),
        }
    }
}

/// Inclusive parameter ranges for one diversity level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityPreset {
    pub name: PresetName,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub hue: (f64, f64),
    pub saturation: (f64, f64),
    pub sharpness: (f64, f64),
    /// Horizontal blur kernel bounds; only odd sizes inside are drawn.
    pub blur_k1: (usize, usize),
    pub blur_k2: (usize, usize),
    pub posterize_bits: (u8, u8),
    pub equalize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Standard,
    Less,
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PresetName::Standard),
            "less" => Ok(PresetName::Less),
            other => Err(Error::Usage(format!("unknown preset `{other}` (expected standard or less)"))),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetName::Standard => "standard",
            PresetName::Less => "less",
        })
    }
}

impl DiversityPreset {
    pub fn standard() -> Self {
        Self {
            name: PresetName::Standard,
            brightness: (0.2, 1.8),
            contrast: (0.3, 1.7),
            hue: (0.7, 1.3),
            saturation: (0.5, 1.5),
            sharpness: (0.0, 2.0),
            blur_k1: (3, 9),
            blur_k2: (5, 11),
            posterize_bits: (1, 6),
            equalize: true,
        }
    }

    /// Halved factor ranges, small blur kernels, no equalization.
    pub fn less() -> Self {
        Self {
            name: PresetName::Less,
            brightness: (0.6, 1.4),
            contrast: (0.65, 1.35),
            hue: (0.85, 1.15),
            saturation: (0.75, 1.25),
            sharpness: (0.5, 1.0),
            blur_k1: (3, 5),
            blur_k2: (3, 5),
            posterize_bits: (1, 6),
            equalize: false,
        }
    }

    pub fn by_name(name: PresetName) -> Self {
        match name {
            PresetName::Standard => Self::standard(),
            PresetName::Less => Self::less(),
        }
    }

    pub fn enabled_kinds(&self) -> Vec<TransformKind> {
        TransformKind::ALL
            .into_iter()
            .filter(|&k| self.equalize || k != TransformKind::Equalize)
            .collect()
    }

    /// True when `spec` is something this preset could have produced.
    pub fn admits(&self, spec: &TransformSpec) -> bool {
        let within = |(lo, hi): (f64, f64), c: f64| (lo..=hi).contains(&c);
        let odd_within = |(lo, hi): (usize, usize), k: usize| k % 2 == 1 && k >= 3 && (lo..=hi).contains(&k);
        match *spec {
            TransformSpec::Brightness { c } => within(self.brightness, c),
            TransformSpec::Contrast { c } => within(self.contrast, c),
            TransformSpec::Hue { c } => within(self.hue, c),
            TransformSpec::Saturation { c } => within(self.saturation, c),
            TransformSpec::Sharpness { c } => within(self.sharpness, c),
            TransformSpec::Blur { k1, k2 } | TransformSpec::Deblur { k1, k2 } => {
                odd_within(self.blur_k1, k1) && odd_within(self.blur_k2, k2)
            }
            TransformSpec::AutoContrast => true,
            TransformSpec::Equalize => self.equalize,
            TransformSpec::Posterize { n } => (self.posterize_bits.0..=self.posterize_bits.1).contains(&n),
        }
    }

    /// Draws parameters for a given kind.
    pub fn sample_params<R: Rng + ?Sized>(&self, kind: TransformKind, rng: &mut R) -> Result<TransformSpec> {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
        Ok(match kind {
            TransformKind::Brightness => TransformSpec::Brightness {
                c: uniform(rng, self.brightness),
            },
            TransformKind::Contrast => TransformSpec::Contrast {
                c: uniform(rng, self.contrast),
            },
            TransformKind::Hue => TransformSpec::Hue { c: uniform(rng, self.hue) },
            TransformKind::Saturation => TransformSpec::Saturation {
                c: uniform(rng, self.saturation),
            },
            TransformKind::Sharpness => TransformSpec::Sharpness {
                c: uniform(rng, self.sharpness),
            },
            TransformKind::Blur | TransformKind::Deblur => {
                let k1 = sample_odd(rng, self.blur_k1)?;
                let k2 = sample_odd(rng, self.blur_k2)?;
                if kind == TransformKind::Blur {
                    TransformSpec::Blur { k1, k2 }
                } else {
                    TransformSpec::Deblur { k1, k2 }
                }
            }
            TransformKind::AutoContrast => TransformSpec::AutoContrast,
            TransformKind::Equalize => {
                if !self.equalize {
                    return Err(param_err!("equalization is disabled in the {} preset", self.name));
                }
                TransformSpec::Equalize
            }
            TransformKind::Posterize => TransformSpec::Posterize {
                n: rng.gen_range(self.posterize_bits.0..=self.posterize_bits.1),
            },
        })
    }
}

fn sample_odd<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> Result<usize> {
    let odds: Vec<usize> = (lo.max(3)..=hi).filter(|k| k % 2 == 1).collect();
    odds.choose(rng)
        .copied()
        .ok_or_else(|| param_err!("no odd kernel size >= 3 in [{lo}, {hi}]"))
}

/// Draws a kind uniformly among the preset's enabled kinds, then its
/// parameters.
pub fn sample_transform<R: Rng + ?Sized>(preset: &DiversityPreset, rng: &mut R) -> TransformSpec {
    sample_transform_from(preset, &preset.enabled_kinds(), rng).expect("presets always have odd kernel sizes")
}

/// Like [`sample_transform`] but restricted to `kinds`.
pub fn sample_transform_from<R: Rng + ?Sized>(
    preset: &DiversityPreset,
    kinds: &[TransformKind],
    rng: &mut R,
) -> Result<TransformSpec> {
    let kind = *kinds.choose(rng).ok_or_else(|| param_err!("no transform kinds to sample from"))?;
    preset.sample_params(kind, rng)
}
