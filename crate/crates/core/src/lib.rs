//! Self-supervised pre-training data and a small shifted-window transformer
//! for image harmonization.
//!
//! The crate builds training pairs from unlabeled images: a random region of
//! an image is perturbed by photometric transforms and pasted back, and a
//! model learns to undo the perturbation. The pieces:
//!
//! - [`image`], [`pnm`]: rasters, masks, color helpers and PPM/PGM I/O.
//! - [`transforms`]: the photometric transform catalog and its sampling presets.
//! - [`mask`]: random, grid and block foreground masks.
//! - [`pipeline`]: seeded, parallel generation of `(composite, mask, target)` samples.
//! - [`metrics`]: MSE, PSNR, fMSE and fPSNR on the 0–255 scale.
//! - [`tensor`]: dense `f64` arrays with reverse-mode autodiff.
//! - [`model`]: the SwinIH network.
//! - [`train`]: losses, AdamW, cosine schedule and training loops.
//!
//! ```
//! use lemart::image::ImageBuffer;
//! use lemart::pipeline::{generate_sample, PipelineConfig};
//!
//! let img = lemart::toy::scene(32, 32, 7);
//! let sample = generate_sample(&img, &PipelineConfig::default(), 0).unwrap();
//! assert_eq!(sample.composite.height(), 32);
//! assert!(sample.mask.ratio() > 0.0);
//! # let _ = ImageBuffer::filled(1, 1, 3, 0.0);
//! ```

pub mod error;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pnm;
pub mod rng;
pub mod tensor;
pub mod toy;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
