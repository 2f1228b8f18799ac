//! Online sample generation: perturb a copy of the image, draw a mask, and
//! paste the perturbed region back over the original.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::image::{composite, ForegroundMask, ImageBuffer};
use crate::mask::MaskSpec;
use crate::rng::{sample_seed, stream, MASK_STREAM, TRANSFORM_STREAM};
use crate::transforms::{sample_transform_from, DiversityPreset, TransformKind, TransformSpec};

pub const MAX_TRANSFORMS_PER_SAMPLE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: DiversityPreset,
    pub mask: MaskSpec,
    /// Transforms chained per sample, 1 to 3.
    pub transforms_per_sample: usize,
    pub master_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preset: DiversityPreset::standard(),
            mask: MaskSpec::default(),
            transforms_per_sample: 1,
            master_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_TRANSFORMS_PER_SAMPLE).contains(&self.transforms_per_sample) {
            return Err(param_err!(
                "transforms per sample must be in 1..={MAX_TRANSFORMS_PER_SAMPLE}, got {}",
                self.transforms_per_sample
            ));
        }
        self.mask.validate()
    }
}

/// Everything needed to regenerate a sample from its source image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub index: u64,
    pub seed: u64,
    pub transforms: Vec<TransformSpec>,
    pub mask: MaskSpec,
}

/// A `(composite, mask, target)` triple plus the perturbed image it was cut
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub composite: ImageBuffer,
    pub mask: ForegroundMask,
    pub target: ImageBuffer,
    pub transformed: ImageBuffer,
    pub provenance: Provenance,
}

/// Draws the transform chain for one sample.
///
/// The first kind is drawn from every kind the preset enables. A deblur draw
/// ends the chain, since it redefines the target; later links are drawn with
/// deblur excluded.
pub fn sample_chain(cfg: &PipelineConfig, seed: u64) -> Result<Vec<TransformSpec>> {
    let mut rng = stream(seed, TRANSFORM_STREAM);
    let kinds = cfg.preset.enabled_kinds();
    let first = sample_transform_from(&cfg.preset, &kinds, &mut rng)?;
    let mut chain = vec![first];
    if first.kind() != TransformKind::Deblur {
        let rest: Vec<TransformKind> = kinds.into_iter().filter(|&k| k != TransformKind::Deblur).collect();
        for _ in 1..cfg.transforms_per_sample {
            chain.push(sample_transform_from(&cfg.preset, &rest, &mut rng)?);
        }
    }
    Ok(chain)
}

/// Applies a chain, returning `(target, transformed)`.
pub fn apply_chain(img: &ImageBuffer, chain: &[TransformSpec]) -> Result<(ImageBuffer, ImageBuffer)> {
    match chain {
        [single @ TransformSpec::Deblur { .. }] => single.apply_pair(img),
        _ => {
            if chain.iter().any(|t| t.kind() == TransformKind::Deblur) {
                return Err(param_err!("deblur must be the only transform in a chain"));
            }
            let mut current = img.clone();
            for t in chain {
                current = t.apply(&current)?;
            }
            Ok((img.clone(), current))
        }
    }
}

/// Regenerates a sample from an explicit chain and mask.
pub fn assemble(
    img: &ImageBuffer,
    chain: Vec<TransformSpec>,
    mask: ForegroundMask,
    provenance_mask: MaskSpec,
    index: u64,
    seed: u64,
) -> Result<TrainingSample> {
    let (target, transformed) = apply_chain(img, &chain)?;
    let composite = composite(&transformed, &target, &mask)?;
    Ok(TrainingSample {
        composite,
        mask,
        target,
        transformed,
        provenance: Provenance {
            index,
            seed,
            transforms: chain,
            mask: provenance_mask,
        },
    })
}

/// Generates sample `index` for `img`. Pure: the same inputs always produce
/// the same sample.
pub fn generate_sample(img: &ImageBuffer, cfg: &PipelineConfig, index: u64) -> Result<TrainingSample> {
    cfg.validate()?;
    cfg.mask.check_dims(img.height(), img.width())?;
    let seed = sample_seed(cfg.master_seed, index);
    let chain = sample_chain(cfg, seed)?;
    let mut mask_rng = stream(seed, MASK_STREAM);
    let mask = cfg.mask.generate(img.height(), img.width(), &mut mask_rng)?;
    assemble(img, chain, mask, cfg.mask, index, seed)
}

/// One input to [`generate_stream`].
#[derive(Clone, Debug)]
pub struct SourceImage {
    pub label: String,
    pub image: ImageBuffer,
}

/// A stream element: the sample index, where it came from, and the outcome.
#[derive(Debug)]
pub struct StreamItem {
    pub index: u64,
    pub source: Option<String>,
    pub sample: Result<TrainingSample>,
}

/// Lazily turns source images into samples, `index` = position in the
/// source. With more than one worker, inputs are processed in bounded
/// batches on a dedicated pool; output order and content do not depend on
/// the worker count.
pub struct SampleStream<I> {
    source: I,
    cfg: PipelineConfig,
    pool: Option<rayon::ThreadPool>,
    batch: usize,
    next_index: u64,
    ready: VecDeque<StreamItem>,
    exhausted: bool,
}

pub fn generate_stream<I>(source: I, cfg: PipelineConfig, workers: usize) -> Result<SampleStream<I::IntoIter>>
where
    I: IntoIterator<Item = Result<SourceImage>>,
{
    cfg.validate()?;
    let workers = workers.max(1);
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| param_err!("cannot start worker pool: {e}"))?,
        )
    } else {
        None
    };
    Ok(SampleStream {
        source: source.into_iter(),
        cfg,
        pool,
        batch: workers * 4,
        next_index: 0,
        ready: VecDeque::new(),
        exhausted: false,
    })
}

fn run_one(cfg: &PipelineConfig, index: u64, input: Result<SourceImage>) -> StreamItem {
    match input {
        Ok(src) => StreamItem {
            index,
            sample: generate_sample(&src.image, cfg, index),
            source: Some(src.label),
        },
        Err(e) => StreamItem {
            index,
            source: None,
            sample: Err(e),
        },
    }
}

impl<I> SampleStream<I>
where
    I: Iterator<Item = Result<SourceImage>>,
{
    fn refill(&mut self) {
        let mut inputs = Vec::with_capacity(self.batch);
        while inputs.len() < self.batch {
            match self.source.next() {
                Some(item) => {
                    inputs.push((self.next_index, item));
                    self.next_index += 1;
                }
                None => {
                    self.exhausted = true;
                    break;
                }
            }
        }
        let cfg = &self.cfg;
        let done: Vec<StreamItem> = match &self.pool {
            Some(pool) => pool.install(|| inputs.into_par_iter().map(|(i, src)| run_one(cfg, i, src)).collect()),
            None => inputs.into_iter().map(|(i, src)| run_one(cfg, i, src)).collect(),
        };
        self.ready.extend(done);
    }
}

impl<I> Iterator for SampleStream<I>
where
    I: Iterator<Item = Result<SourceImage>>,
{
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        if self.ready.is_empty() && !self.exhausted {
            self.refill();
        }
        self.ready.pop_front()
    }
}

/// Relative file names written for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub composite: String,
    pub mask: String,
    pub target: String,
}

impl SampleFiles {
    pub fn for_index(prefix: &str, index: u64) -> Self {
        Self {
            composite: format!("{prefix}_{index}_composite.ppm"),
            mask: format!("{prefix}_{index}_mask.pgm"),
            target: format!("{prefix}_{index}_target.ppm"),
        }
    }
}

/// One JSON-lines manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: u64,
    pub source_path: String,
    pub transforms: Vec<TransformSpec>,
    pub mask: MaskSpec,
    pub seed: u64,
    pub files: SampleFiles,
}

impl ManifestRecord {
    pub fn new(sample: &TrainingSample, source_path: String, files: SampleFiles) -> Self {
        Self {
            index: sample.provenance.index,
            source_path,
            transforms: sample.provenance.transforms.clone(),
            mask: sample.provenance.mask,
            seed: sample.provenance.seed,
            files,
        }
    }
}
