//! Pre-training on generated samples and fine-tuning on labeled triples.
//!
//! Both loops are step-based: each step draws `batch_size` examples, runs
//! one forward/backward per example, averages the gradients in batch order
//! and takes an AdamW step at the cosine-annealed learning rate. Given the
//! same model, samples and config, a run is bit-identical.

mod loss;
mod optim;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{default_min_area, fn_mse_loss, fn_mse_value, image_tensor, mse_loss, mse_value, MIN_AREA_AT_256};
pub use optim::{cosine_lr, AdamW, AdamWConfig};

use crate::error::{param_err, Error, Result};
use crate::image::{ForegroundMask, ImageBuffer};
use crate::metrics;
use crate::model::SwinIH;
use crate::pipeline::{generate_stream, PipelineConfig, SourceImage, TrainingSample};
use crate::rng::{sample_seed, stream};
use crate::toy::LabeledTriple;

const SHUFFLE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub min_lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Foreground area floor for the fine-tuning loss; `None` scales 100
    /// pixels at 256×256 to the image size.
    pub min_area: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            lr_pretrain: 2.7e-2,
            lr_finetune: 2.7e-3,
            min_lr: 0.0,
            steps: 1000,
            batch_size: 192,
            min_area: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small batches and learning rates that converge on 32×32 inputs with
    /// batch sizes in the single digits.
    pub fn desk() -> Self {
        Self {
            lr_pretrain: 1.5e-3,
            lr_finetune: 1e-3,
            steps: 200,
            batch_size: 1,
            ..Self::default()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_finetune", self.lr_finetune),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(param_err!("{name} must be positive, got {v}"));
            }
        }
        if !(self.beta1 < 1.0 && self.beta2 < 1.0) {
            return Err(param_err!("betas must be below 1"));
        }
        if !(self.weight_decay >= 0.0 && self.min_lr >= 0.0) {
            return Err(param_err!("weight decay and min lr must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(param_err!("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<StepRecord>,
}

impl LossHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn first(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// `step,lr,loss` rows with full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e}\n", r.step, r.lr, r.loss));
        }
        out
    }
}

/// One supervised example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub composite: &'a ImageBuffer,
    pub mask: &'a ForegroundMask,
    pub target: &'a ImageBuffer,
}

impl<'a> From<&'a TrainingSample> for Example<'a> {
    fn from(s: &'a TrainingSample) -> Self {
        Self {
            composite: &s.composite,
            mask: &s.mask,
            target: &s.target,
        }
    }
}

impl<'a> From<&'a LabeledTriple> for Example<'a> {
    fn from(t: &'a LabeledTriple) -> Self {
        Self {
            composite: &t.composite,
            mask: &t.mask,
            target: &t.target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Mse,
    /// Foreground-normalized MSE; `None` uses [`default_min_area`].
    FnMse(Option<f64>),
}

/// Loss and parameter gradients for one example.
pub fn example_gradients(model: &SwinIH, ex: Example<'_>, objective: Objective) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = crate::tensor::Tape::new();
    let vars = model.bind(&mut tape);
    let pred = model.forward_on_tape(&mut tape, &vars, ex.composite, ex.mask)?;
    let target = tape.constant(image_tensor(ex.target));
    let loss = match objective {
        Objective::Mse => mse_loss(&mut tape, pred, target)?,
        Objective::FnMse(min_area) => {
            let a = min_area.unwrap_or_else(|| default_min_area(ex.target.height(), ex.target.width()));
            fn_mse_loss(&mut tape, pred, target, ex.mask, a)?
        }
    };
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    Ok((value, g))
}

/// Averages per-example gradients in order and takes one optimizer step.
/// Examples run on the current rayon pool. Returns the mean batch loss.
pub fn train_step(model: &mut SwinIH, opt: &mut AdamW, batch: &[Example<'_>], objective: Objective, lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(param_err!("empty batch"));
    }
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    // gradients in parallel, summed in batch order
    let shared: &SwinIH = model;
    let per_example: Vec<Result<(f64, Vec<Vec<f64>>)>> =
        batch.par_iter().map(|ex| example_gradients(shared, *ex, objective)).collect();
    for r in per_example {
        let (loss, grads) = r?;
        total += loss;
        for (a, g) in acc.iter_mut().zip(grads) {
            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for a in &mut acc {
        a.iter_mut().for_each(|x| *x *= scale);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(param_err!("loss became non-finite ({loss})"));
    }
    opt.step(model.params_mut(), &acc, lr)?;
    Ok(loss)
}

/// Pre-trains with the plain MSE objective, drawing `steps × batch_size`
/// samples from `samples`.
pub fn pretrain_loop<I>(model: &mut SwinIH, samples: I, cfg: &TrainConfig) -> Result<LossHistory>
where
    I: IntoIterator<Item = Result<TrainingSample>>,
{
    cfg.validate()?;
    let mut samples = samples.into_iter();
    let mut opt = AdamW::new(cfg.adamw(), model.params());
    let mut history = LossHistory::default();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            match samples.next() {
                Some(s) => batch.push(s?),
                None => return Err(Error::Usage(format!("sample stream ended at step {step} of {}", cfg.steps))),
            }
        }
        let examples: Vec<Example<'_>> = batch.iter().map(Example::from).collect();
        let lr = cosine_lr(step, cfg.steps, cfg.lr_pretrain, cfg.min_lr)?;
        let loss = train_step(model, &mut opt, &examples, Objective::Mse, lr)?;
        history.records.push(StepRecord { step, lr, loss });
    }
    Ok(history)
}

/// Endless samples cycling over `images`; sample `i` comes from image
/// `i mod len`. Output does not depend on `workers`.
pub fn pretrain_samples(
    images: Vec<ImageBuffer>,
    pipeline: PipelineConfig,
    workers: usize,
) -> Result<impl Iterator<Item = Result<TrainingSample>>> {
    if images.is_empty() {
        return Err(param_err!("no pre-training images"));
    }
    let source = (0..).map(move |i: usize| {
        let k = i % images.len();
        Ok(SourceImage {
            label: format!("pool{k}"),
            image: images[k].clone(),
        })
    });
    Ok(generate_stream(source, pipeline, workers)?.map(|item| item.sample))
}

/// Indices of a uniform subsample of `round(fraction · n)` items (at least
/// one), sorted.
pub fn select_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(param_err!("fraction must be in (0, 1], got {fraction}"));
    }
    if n == 0 {
        return Err(param_err!("nothing to select from"));
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = stream(sample_seed(seed, n as u64), SHUFFLE_STREAM);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Fine-tunes with the foreground-normalized loss on a `fraction` subset of
/// `triples`. Each pass over the subset is freshly shuffled.
pub fn finetune_loop(model: &mut SwinIH, triples: &[LabeledTriple], fraction: f64, cfg: &TrainConfig) -> Result<LossHistory> {
    cfg.validate()?;
    let subset = select_fraction(triples.len(), fraction, cfg.seed)?;
    let mut rng = stream(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = Vec::new();
    let mut opt = AdamW::new(cfg.adamw(), model.params());
    let mut history = LossHistory::default();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = subset.clone();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let i = order.pop().expect("refilled");
            batch.push(Example::from(&triples[i]));
        }
        let lr = cosine_lr(step, cfg.steps, cfg.lr_finetune, cfg.min_lr)?;
        let loss = train_step(model, &mut opt, &batch, Objective::FnMse(cfg.min_area), lr)?;
        history.records.push(StepRecord { step, lr, loss });
    }
    Ok(history)
}

/// Mean per-image MSE on the 0–255 scale.
pub fn validation_mse(model: &SwinIH, triples: &[LabeledTriple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(param_err!("empty validation set"));
    }
    let mut total = 0.0;
    for t in triples {
        let pred = model.forward(&t.composite, &t.mask)?;
        total += metrics::mse(&pred, &t.target)?;
    }
    Ok(total / triples.len() as f64)
}
