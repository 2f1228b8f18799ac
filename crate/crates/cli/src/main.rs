//! `lemart`: generate pre-training samples, evaluate harmonization output,
//! run a small training demo, or apply a single transform.
//!
//! Exit codes: 0 on success, 1 when a run fails or any file-level error
//! was reported, 2 on usage errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lemart::Error;

#[derive(Parser, Debug)]
#[command(name = "lemart", version, about = "Masked-region transform pre-training toolkit for image harmonization")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` settings file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate (composite, mask, target) samples from a set of images.
    Generate(GenerateArgs),
    /// Compute MSE, PSNR, fMSE and fPSNR for prediction/ground-truth pairs.
    Eval(EvalArgs),
    /// Train a SwinIH model on synthetic scenes.
    TrainDemo(TrainArgs),
    /// Apply one transform to one image.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Directory of PPM/PGM images, or a text file listing one path per line.
    #[arg(long)]
    pub input: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// File name prefix for samples, manifest and config echo.
    #[arg(long)]
    pub prefix: Option<String>,
    /// Transform diversity: standard or less.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mask strategy: random, grid or block.
    #[arg(long)]
    pub mask: Option<String>,
    /// Cells per side for random and grid masks.
    #[arg(long)]
    pub partition: Option<usize>,
    /// Target foreground ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Transforms chained per sample (1-3).
    #[arg(long)]
    pub transforms: Option<usize>,
    /// Samples drawn from each input image.
    #[arg(long)]
    pub per_image: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Manifest written by `generate`; evaluates composites against targets
    /// unless `--pred` is given.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Prediction directory. With a manifest, files are looked up by the
    /// composite file name.
    #[arg(long)]
    pub pred: Option<String>,
    /// Ground-truth directory (same file names as predictions).
    #[arg(long)]
    pub gt: Option<String>,
    /// Mask directory (prediction file stem + `.pgm`).
    #[arg(long)]
    pub masks: Option<String>,
    /// CSV report path.
    #[arg(long)]
    pub csv: Option<String>,
    /// Markdown report path; printed to stdout when omitted.
    #[arg(long)]
    pub markdown: Option<String>,
    /// Compare 8-bit quantized values instead of floats.
    #[arg(long)]
    pub quantized: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model and data scale: desk or paper-shape.
    #[arg(long)]
    pub preset: Option<String>,
    /// pretrain (MSE on generated samples) or finetune (fn-MSE on labeled toy triples).
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate for the chosen stage.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Scenes in the synthetic corpus.
    #[arg(long)]
    pub images: Option<usize>,
    /// Fraction of the labeled set used when fine-tuning.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub from_checkpoint: Option<String>,
    /// Checkpoint path; the loss history goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// brightness, contrast, hue, saturation, sharpness, blur, deblur,
    /// auto_contrast, equalize or posterize.
    pub transform: String,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
    /// Enhancement factor.
    #[arg(long)]
    pub c: Option<f64>,
    /// Horizontal kernel size.
    #[arg(long)]
    pub k1: Option<usize>,
    /// Vertical kernel size.
    #[arg(long)]
    pub k2: Option<usize>,
    /// Posterize bit depth.
    #[arg(long)]
    pub n: Option<u8>,
}

/// Result of a command that may have partially failed.
pub enum Outcome {
    Ok,
    /// Ran to completion but some inputs failed.
    Partial(usize),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.global, a),
        Command::Eval(a) => commands::eval(&cli.global, a),
        Command::TrainDemo(a) => commands::train_demo(&cli.global, a),
        Command::Inspect(a) => commands::inspect(&cli.global, a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("{n} item(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) => 2,
                _ => 1,
            })
        }
    }
}
