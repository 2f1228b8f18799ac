use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lemart::image::ImageBuffer;
use lemart::mask::{MaskSpec, MaskStrategy};
use lemart::metrics::{self, MetricReport, Scale};
use lemart::model::{ModelConfig, SwinIH};
use lemart::pipeline::{generate_stream, ManifestRecord, PipelineConfig, SampleFiles, SourceImage};
use lemart::pnm;
use lemart::toy;
use lemart::train::{finetune_loop, pretrain_loop, pretrain_samples, TrainConfig};
use lemart::transforms::{DiversityPreset, PresetName, TransformKind, TransformSpec};
use lemart::{Error, Result};

use crate::config::Resolver;
use crate::{EvalArgs, GenerateArgs, Global, InspectArgs, Outcome, TrainArgs};

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Reads a PPM, or a PGM expanded to three equal channels.
fn read_rgb(path: &Path) -> Result<ImageBuffer> {
    let img = pnm::read_image(path)?;
    if img.channels() == 3 {
        return Ok(img);
    }
    let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
    ImageBuffer::new(img.height(), img.width(), 3, data)
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// Sorted image files of a directory, or the paths listed in a text file.
fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut paths = Vec::new();
        for entry in fs::read_dir(input)? {
            let path = entry?.path();
            if path.is_file() && is_pnm(&path) {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(paths)
    } else if input.is_file() {
        let text = fs::read_to_string(input)?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(PathBuf::from)
            .collect())
    } else {
        Err(usage(format!("input {} does not exist", input.display())))
    }
}

fn threads(res: &mut Resolver, global: &Global) -> Result<usize> {
    let n = res.get_unechoed("threads", global.threads, 1usize)?;
    if n == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    Ok(n)
}

pub fn generate(global: &Global, args: &GenerateArgs) -> Result<Outcome> {
    let mut res = Resolver::new(global.config.as_deref())?;
    let seed = res.get("seed", global.seed, 0u64)?;
    let workers = threads(&mut res, global)?;
    let input: String = res.require("input", args.input.clone())?;
    let out: String = res.require("out", args.out.clone())?;
    let prefix = res.get("prefix", args.prefix.clone(), "sample".to_string())?;
    let preset: PresetName = res.get("preset", args.preset.clone(), "standard".into())?.parse()?;
    let defaults = MaskSpec::default();
    let strategy: MaskStrategy = res.get("mask", args.mask.clone(), defaults.strategy.to_string())?.parse()?;
    let partition = res.get("partition", args.partition, defaults.partition)?;
    let ratio = res.get("ratio", args.ratio, defaults.target_ratio)?;
    let transforms = res.get("transforms", args.transforms, 1usize)?;
    let per_image = res.get("per-image", args.per_image, 1usize)?;
    res.finish()?;
    if per_image == 0 {
        return Err(usage("--per-image must be at least 1"));
    }
    let mask = MaskSpec::new(strategy, partition, ratio).map_err(|e| usage(e.to_string()))?;
    let cfg = PipelineConfig {
        preset: DiversityPreset::by_name(preset),
        mask,
        transforms_per_sample: transforms,
        master_seed: seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let paths = list_inputs(Path::new(&input))?;
    let out_dir = PathBuf::from(&out);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join(format!("{prefix}_config.txt")), res.render())?;

    let labels: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let source = paths.iter().flat_map(|p| std::iter::repeat(p).take(per_image)).map(|p| {
        read_rgb(p).map(|image| SourceImage {
            label: p.display().to_string(),
            image,
        })
    });
    let mut manifest = fs::File::create(out_dir.join(format!("{prefix}_manifest.jsonl")))?;
    let mut failed = 0;
    for item in generate_stream(source, cfg, workers)? {
        let label = &labels[item.index as usize / per_image];
        let sample = match item.sample {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{label}: sample {}: {e}", item.index);
                failed += 1;
                continue;
            }
        };
        let files = SampleFiles::for_index(&prefix, item.index);
        pnm::write_image(out_dir.join(&files.composite), &sample.composite)?;
        pnm::write_mask(out_dir.join(&files.mask), &sample.mask)?;
        pnm::write_image(out_dir.join(&files.target), &sample.target)?;
        let record = ManifestRecord::new(&sample, label.clone(), files);
        writeln!(manifest, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(if failed == 0 { Outcome::Ok } else { Outcome::Partial(failed) })
}

struct EvalItem {
    name: String,
    pred: PathBuf,
    gt: PathBuf,
    mask: PathBuf,
}

fn manifest_items(manifest: &Path, pred_dir: Option<&Path>) -> Result<Vec<EvalItem>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest)?;
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", manifest.display(), n + 1)))?;
        let f = rec.files;
        items.push(EvalItem {
            pred: pred_dir.unwrap_or(dir).join(&f.composite),
            name: f.composite,
            gt: dir.join(f.target),
            mask: dir.join(f.mask),
        });
    }
    Ok(items)
}

fn directory_items(pred: &Path, gt: &Path, masks: &Path) -> Result<Vec<EvalItem>> {
    let mut items = Vec::new();
    for path in list_inputs(pred)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        items.push(EvalItem {
            gt: gt.join(&name),
            mask: masks.join(format!("{stem}.pgm")),
            pred: path,
            name,
        });
    }
    Ok(items)
}

fn eval_one(item: &EvalItem, scale: Scale) -> Result<MetricReport> {
    let pred = read_rgb(&item.pred)?;
    let gt = read_rgb(&item.gt)?;
    let mask = pnm::read_mask(&item.mask)?;
    metrics::evaluate_with(&pred, &gt, &mask, scale)
}

const COLUMNS: [&str; 5] = ["MSE", "PSNR", "fMSE", "fPSNR", "fg_pixels"];

fn csv_report(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("image,{}\n", COLUMNS.join(","));
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{},{},{},{},{}", r.mse, r.psnr, r.fmse, r.fpsnr, r.fg_pixel_count);
    }
    s
}

fn markdown_report(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("| image | {} |\n|---|---:|---:|---:|---:|---:|\n", COLUMNS.join(" | "));
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "| {name} | {:.2} | {:.2} | {:.2} | {:.2} | {} |",
            r.mse, r.psnr, r.fmse, r.fpsnr, r.fg_pixel_count
        );
    }
    s
}

pub fn eval(global: &Global, args: &EvalArgs) -> Result<Outcome> {
    let mut res = Resolver::new(global.config.as_deref())?;
    let manifest: Option<String> = res.get_opt("manifest", args.manifest.clone())?;
    let pred: Option<String> = res.get_opt("pred", args.pred.clone())?;
    let items = match manifest {
        Some(m) => manifest_items(Path::new(&m), pred.as_deref().map(Path::new))?,
        None => {
            let Some(pred) = pred else {
                return Err(usage("eval needs --manifest or --pred/--gt/--masks"));
            };
            let gt: String = res.require("gt", args.gt.clone())?;
            let masks: String = res.require("masks", args.masks.clone())?;
            directory_items(Path::new(&pred), Path::new(&gt), Path::new(&masks))?
        }
    };
    let csv: Option<String> = res.get_opt("csv", args.csv.clone())?;
    let markdown: Option<String> = res.get_opt("markdown", args.markdown.clone())?;
    let quantized = res.get("quantized", args.quantized, false)?;
    res.finish()?;
    let scale = if quantized { Scale::Quantized } else { Scale::Float };

    let mut rows = Vec::new();
    let mut failed = 0;
    for item in &items {
        match eval_one(item, scale) {
            Ok(r) => rows.push((item.name.clone(), r)),
            Err(e) => {
                eprintln!("{}: {e}", item.name);
                failed += 1;
            }
        }
    }
    if !rows.is_empty() {
        let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
        rows.push(("mean".to_string(), metrics::aggregate(&reports)?));
    }
    if let Some(path) = csv {
        fs::write(path, csv_report(&rows))?;
    }
    let md = markdown_report(&rows);
    match markdown {
        Some(path) => fs::write(path, md)?,
        None => print!("{md}"),
    }
    Ok(if failed == 0 { Outcome::Ok } else { Outcome::Partial(failed) })
}

pub fn train_demo(global: &Global, args: &TrainArgs) -> Result<Outcome> {
    let mut res = Resolver::new(global.config.as_deref())?;
    let seed = res.get("seed", global.seed, 0u64)?;
    let workers = threads(&mut res, global)?;
    let preset = res.get("preset", args.preset.clone(), "desk".to_string())?;
    let (model_cfg, size) = match preset.as_str() {
        "desk" => (ModelConfig::desk(), 32),
        "paper-shape" => (ModelConfig::paper_shape(), 256),
        other => return Err(usage(format!("unknown preset `{other}` (expected desk or paper-shape)"))),
    };
    let stage = res.get("stage", args.stage.clone(), "pretrain".to_string())?;
    let finetune = match stage.as_str() {
        "pretrain" => false,
        "finetune" => true,
        other => return Err(usage(format!("unknown stage `{other}` (expected pretrain or finetune)"))),
    };
    let defaults = TrainConfig::desk();
    let mut cfg = TrainConfig {
        steps: res.get("steps", args.steps, defaults.steps)?,
        batch_size: res.get("batch-size", args.batch_size, defaults.batch_size)?,
        seed,
        ..defaults
    };
    let lr_default = if finetune { cfg.lr_finetune } else { cfg.lr_pretrain };
    let lr = res.get("lr", args.lr, lr_default)?;
    cfg.lr_pretrain = lr;
    cfg.lr_finetune = lr;
    let images = res.get("images", args.images, 16usize)?;
    let fraction = if finetune {
        res.get("fraction", args.fraction, 1.0f64)?
    } else {
        1.0
    };
    let from: Option<String> = res.get_opt("from-checkpoint", args.from_checkpoint.clone())?;
    let out: String = res.require("out", args.out.clone())?;
    res.finish()?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if images == 0 {
        return Err(usage("--images must be at least 1"));
    }

    let mut model = match &from {
        Some(path) => SwinIH::load(Path::new(path), Some(model_cfg.clone()))?,
        None => SwinIH::new(model_cfg.clone(), seed)?,
    };
    if model.config() != &model_cfg {
        return Err(usage(format!("checkpoint was not trained with the `{preset}` preset")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    let corpus = toy::corpus(images, size, size, seed.wrapping_mul(1000));
    let history = pool.install(|| {
        if finetune {
            let triples = corpus
                .iter()
                .enumerate()
                .map(|(i, img)| toy::labeled_triple(img, seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>>>()?;
            finetune_loop(&mut model, &triples, fraction, &cfg)
        } else {
            let pipeline = PipelineConfig {
                master_seed: seed,
                ..PipelineConfig::default()
            };
            pretrain_loop(&mut model, pretrain_samples(corpus, pipeline, workers)?, &cfg)
        }
    })?;

    let out = PathBuf::from(out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(&out)?;
    fs::write(suffixed(&out, ".loss.csv"), history.to_csv())?;
    fs::write(suffixed(&out, ".config.txt"), res.render())?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("{stage}: {} steps, loss {first:.6} -> {last:.6}", history.records.len());
    }
    Ok(Outcome::Ok)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn inspect(global: &Global, args: &InspectArgs) -> Result<Outcome> {
    let kind: TransformKind = args.transform.parse()?;
    let mut res = Resolver::new(global.config.as_deref())?;
    let input: String = res.require("input", args.input.clone())?;
    let output: String = res.require("output", args.output.clone())?;
    let spec = match kind {
        TransformKind::Brightness
        | TransformKind::Contrast
        | TransformKind::Hue
        | TransformKind::Saturation
        | TransformKind::Sharpness => {
            let c = res.require("c", args.c)?;
            match kind {
                TransformKind::Brightness => TransformSpec::Brightness { c },
                TransformKind::Contrast => TransformSpec::Contrast { c },
                TransformKind::Hue => TransformSpec::Hue { c },
                TransformKind::Saturation => TransformSpec::Saturation { c },
                _ => TransformSpec::Sharpness { c },
            }
        }
        TransformKind::Blur | TransformKind::Deblur => {
            let k1 = res.require("k1", args.k1)?;
            let k2 = res.get("k2", args.k2, k1)?;
            if kind == TransformKind::Blur {
                TransformSpec::Blur { k1, k2 }
            } else {
                TransformSpec::Deblur { k1, k2 }
            }
        }
        TransformKind::AutoContrast => TransformSpec::AutoContrast,
        TransformKind::Equalize => TransformSpec::Equalize,
        TransformKind::Posterize => TransformSpec::Posterize {
            n: res.require("n", args.n)?,
        },
    };
    res.finish()?;
    let img = pnm::read_image(&input)?;
    let result = spec.apply(&img).map_err(|e| match e {
        Error::Parameter(m) => Error::Usage(m),
        other => other,
    })?;
    pnm::write_image(&output, &result)?;
    Ok(Outcome::Ok)
}
