//! Small synthetic scenes and harmonization triples for desk-scale runs.
//!
//! Scenes are smooth gradients with a few flat-shaded shapes. Labeled
//! triples mimic a real composite: an object-like region whose colors were
//! shifted by a camera-style gain and gamma, with the untouched scene as the
//! ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{composite, ForegroundMask, ImageBuffer};
use crate::mask::{block_mask, MaskSpec, MaskStrategy};
use crate::rng::{sample_seed, stream};

fn rand_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

/// A deterministic RGB scene.
pub fn scene(height: usize, width: usize, seed: u64) -> ImageBuffer {
    let mut rng = stream(sample_seed(0x5CE9E, seed), 0);
    let top = rand_color(&mut rng);
    let bottom = rand_color(&mut rng);
    let tilt: f64 = rng.gen_range(-0.5..0.5);
    let shapes: usize = rng.gen_range(2..=4);
    let shapes: Vec<(bool, f64, f64, f64, f64, [f64; 3])> = (0..shapes)
        .map(|_| {
            (
                rng.gen_bool(0.5),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.12..0.35),
                rng.gen_range(0.12..0.35),
                rand_color(&mut rng),
            )
        })
        .collect();
    let (hf, wf) = (height as f64, width as f64);
    let mut data = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        for c in 0..width {
            let y = (r as f64 + 0.5) / hf;
            let x = (c as f64 + 0.5) / wf;
            let t = (y + tilt * (x - 0.5)).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for k in 0..3 {
                px[k] = top[k] * (1.0 - t) + bottom[k] * t;
            }
            for &(ellipse, cx, cy, rx, ry, color) in &shapes {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    let shade = 1.0 - 0.25 * (dx * 0.5 + dy * 0.5).clamp(-1.0, 1.0);
                    for k in 0..3 {
                        px[k] = color[k] * shade;
                    }
                }
            }
            data.extend(px);
        }
    }
    ImageBuffer::from_clamped(height, width, 3, data).expect("scene dimensions are consistent")
}

/// `count` scenes with seeds `first_seed..first_seed + count`.
pub fn corpus(count: usize, height: usize, width: usize, first_seed: u64) -> Vec<ImageBuffer> {
    (0..count as u64).map(|i| scene(height, width, first_seed + i)).collect()
}

/// Color mismatch applied to the foreground of a labeled triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraShift {
    pub gains: [f64; 3],
    pub gamma: f64,
}

impl CameraShift {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            gains: [rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)],
            gamma: rng.gen_range(0.7..1.4),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.gains[i % 3] * v).clamp(0.0, 1.0).powf(self.gamma))
            .collect();
        ImageBuffer::from_clamped(img.height(), img.width(), 3, data).expect("same shape")
    }
}

/// A labeled harmonization example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTriple {
    pub composite: ImageBuffer,
    pub mask: ForegroundMask,
    pub target: ImageBuffer,
}

/// Builds a labeled triple from a clean scene: an object-like block mask
/// covering 20–40% of the image, filled with a color-shifted copy.
pub fn labeled_triple(target: &ImageBuffer, seed: u64) -> Result<LabeledTriple> {
    let mut rng = stream(sample_seed(0x1ABE1, seed), 0);
    let spec = MaskSpec {
        strategy: MaskStrategy::Block,
        partition: 0,
        target_ratio: rng.gen_range(0.2..0.4),
    };
    let mask = block_mask(&spec, target.height(), target.width(), &mut rng)?;
    let shifted = CameraShift::sample(&mut rng).apply(target);
    Ok(LabeledTriple {
        composite: composite(&shifted, target, &mask)?,
        mask,
        target: target.clone(),
    })
}
