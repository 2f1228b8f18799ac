use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lemart::image::ImageBuffer;
use lemart::pipeline::ManifestRecord;
use lemart::pnm;
use lemart::toy;
use lemart::transforms::TransformKind;

fn lemart(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lemart"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run lemart")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_scenes(dir: &Path, n: usize, size: usize) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("scene{i:03}.ppm"));
            pnm::write_image(&p, &toy::scene(size, size, i as u64)).unwrap();
            p
        })
        .collect()
}

fn manifest(path: &Path) -> Vec<ManifestRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = lemart(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["generate", "eval", "train-demo", "inspect"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(code(&lemart(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&lemart(dir.path(), &[])), 2);
}

#[test]
fn generate_writes_triples_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(&dir.path().join("in"), 3, 32);
    let out = lemart(dir.path(), &["generate", "--input", "in", "--out", "out", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files = tree(&dir.path().join("out"));
    let images = files.iter().filter(|(n, _)| n.ends_with(".ppm") || n.ends_with(".pgm")).count();
    assert_eq!(images, 9);
    let records = manifest(&dir.path().join("out/sample_manifest.jsonl"));
    assert_eq!(records.len(), 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.index, i as u64);
        assert_eq!(r.source_path, format!("in/scene{i:03}.ppm"));
        assert_eq!(r.files.composite, format!("sample_{i}_composite.ppm"));
        assert!(!r.transforms.is_empty());
    }
    let echo = fs::read_to_string(dir.path().join("out/sample_config.txt")).unwrap();
    assert!(echo.contains("seed = 4\n"));
    assert!(!echo.contains("threads"));
}

#[test]
fn generate_is_repeatable_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(&dir.path().join("in"), 4, 32);
    let run = |sub: &str, threads: &str| {
        let base = dir.path().join(sub);
        fs::create_dir_all(&base).unwrap();
        let args = ["generate", "--input", "../in", "--out", "out", "--per-image", "3", "--threads", threads, "--transforms", "2"];
        assert_eq!(code(&lemart(&base, &args)), 0);
        tree(&base.join("out"))
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
}

#[test]
fn less_preset_never_equalizes() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(&dir.path().join("in"), 100, 8);
    let args = ["generate", "--input", "in", "--out", "out", "--preset", "less", "--per-image", "100", "--transforms", "3", "--threads", "4"];
    assert_eq!(code(&lemart(dir.path(), &args)), 0);
    let records = manifest(&dir.path().join("out/sample_manifest.jsonl"));
    assert_eq!(records.len(), 10_000);
    assert!(records
        .iter()
        .flat_map(|r| &r.transforms)
        .all(|t| t.kind() != TransformKind::Equalize));
}

#[test]
fn bad_inputs_are_reported_per_file() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(&dir.path().join("in"), 2, 32);
    fs::write(dir.path().join("in/broken.ppm"), b"P6\n32 32\n255\nshort").unwrap();
    let gray = toy::scene(32, 32, 9).channel(1).unwrap();
    pnm::write_image(dir.path().join("in/gray.pgm"), &gray).unwrap();
    let out = lemart(dir.path(), &["generate", "--input", "in", "--out", "out"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.ppm"));
    // broken.ppm sorts first, then gray.pgm and the two scenes
    let records = manifest(&dir.path().join("out/sample_manifest.jsonl"));
    assert_eq!(records.iter().map(|r| r.index).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(pnm::read_image(dir.path().join("out/sample_1_target.ppm")).unwrap().channels(), 3);

    let list = dir.path().join("list.txt");
    fs::write(&list, "in/scene000.ppm\n\nin/missing.ppm\n").unwrap();
    let out = lemart(dir.path(), &["generate", "--input", "list.txt", "--out", "out2"]);
    assert_eq!(code(&out), 1);
    assert_eq!(manifest(&dir.path().join("out2/sample_manifest.jsonl")).len(), 1);

    assert_eq!(code(&lemart(dir.path(), &["generate", "--input", "nowhere", "--out", "o"])), 2);
    assert_eq!(code(&lemart(dir.path(), &["generate", "--input", "in"])), 2);
    assert_eq!(code(&lemart(dir.path(), &["generate", "--input", "in", "--out", "o", "--ratio", "1.5"])), 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    write_scenes(&dir.path().join("in"), 2, 32);
    fs::write(dir.path().join("run.cfg"), "# demo\ninput = in\nout = out\nseed = 3\nratio = 0.25\n").unwrap();
    let out = lemart(dir.path(), &["--config", "run.cfg", "generate", "--seed", "8"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let echo = fs::read_to_string(dir.path().join("out/sample_config.txt")).unwrap();
    assert!(echo.contains("seed = 8\n"));
    assert!(echo.contains("ratio = 0.25\n"));
    let rec = &manifest(&dir.path().join("out/sample_manifest.jsonl"))[0];
    assert_eq!(rec.mask.target_ratio, 0.25);

    fs::write(dir.path().join("bad.cfg"), "input = in\nout = out\ncolour = red\n").unwrap();
    assert_eq!(code(&lemart(dir.path(), &["--config", "bad.cfg", "generate"])), 2);
    assert_eq!(code(&lemart(dir.path(), &["--config", "absent.cfg", "generate"])), 2);
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn eval_of_identical_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["pred", "gt", "masks"] {
        fs::create_dir_all(d.join(sub)).unwrap();
    }
    for i in 0..3u64 {
        let img = toy::scene(16, 16, i);
        pnm::write_image(d.join(format!("pred/p{i}.ppm")), &img).unwrap();
        pnm::write_image(d.join(format!("gt/p{i}.ppm")), &img).unwrap();
        let mask = lemart::image::ForegroundMask::full(16, 16);
        pnm::write_mask(d.join(format!("masks/p{i}.pgm")), &mask).unwrap();
    }
    let out = lemart(d, &["eval", "--pred", "pred", "--gt", "gt", "--masks", "masks", "--csv", "r.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&fs::read_to_string(d.join("r.csv")).unwrap());
    assert_eq!(rows[0], ["image", "MSE", "PSNR", "fMSE", "fPSNR", "fg_pixels"]);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][0], "mean");
    for row in &rows[1..] {
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 100.0);
        assert_eq!(row[4].parse::<f64>().unwrap(), 100.0);
    }
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.starts_with("| image | MSE | PSNR | fMSE | fPSNR |"));
}

#[test]
fn eval_composite_baseline_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(&d.join("in"), 4, 32);
    let args = ["generate", "--input", "in", "--out", "out", "--per-image", "2", "--seed", "11"];
    assert_eq!(code(&lemart(d, &args)), 0);
    let out = lemart(d, &["eval", "--manifest", "out/sample_manifest.jsonl", "--csv", "r.csv", "--markdown", "r.md"]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(d.join("r.md")).unwrap().contains("| mean |"));
    let rows = parse_csv(&fs::read_to_string(d.join("r.csv")).unwrap());
    let mut nonzero = 0;
    for (row, rec) in rows[1..rows.len() - 1].iter().zip(manifest(&d.join("out/sample_manifest.jsonl"))) {
        let mse: f64 = row[1].parse().unwrap();
        let fmse: f64 = row[3].parse().unwrap();
        let fg: f64 = row[5].parse().unwrap();
        // all error lies under the mask, so fMSE = MSE · hw / fg
        assert!((fmse - mse * 1024.0 / fg).abs() <= 1e-9 * fmse.max(1.0));
        if fmse > 0.0 {
            nonzero += 1;
        }
        let comp = pnm::read_image(d.join("out").join(&rec.files.composite)).unwrap();
        let target = pnm::read_image(d.join("out").join(&rec.files.target)).unwrap();
        let mask = pnm::read_mask(d.join("out").join(&rec.files.mask)).unwrap();
        for (p, &m) in mask.bits().iter().enumerate() {
            if !m {
                assert_eq!(comp.pixel(p / 32, p % 32), target.pixel(p / 32, p % 32));
            }
        }
    }
    assert!(nonzero >= 6, "only {nonzero} samples changed");

    // predictions from another directory, looked up by composite name
    let pred_dir = d.join("preds");
    fs::create_dir_all(&pred_dir).unwrap();
    for rec in manifest(&d.join("out/sample_manifest.jsonl")) {
        fs::copy(d.join("out").join(&rec.files.target), pred_dir.join(&rec.files.composite)).unwrap();
    }
    let out = lemart(d, &["eval", "--manifest", "out/sample_manifest.jsonl", "--pred", "preds", "--csv", "p.csv"]);
    assert_eq!(code(&out), 0);
    let rows = parse_csv(&fs::read_to_string(d.join("p.csv")).unwrap());
    assert!(rows[1..].iter().all(|r| r[1] == "0"));
}

#[test]
fn eval_missing_mask_is_a_row_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(&d.join("in"), 3, 32);
    assert_eq!(code(&lemart(d, &["generate", "--input", "in", "--out", "out"])), 0);
    fs::remove_file(d.join("out/sample_1_mask.pgm")).unwrap();
    let out = lemart(d, &["eval", "--manifest", "out/sample_manifest.jsonl", "--csv", "r.csv"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample_1_composite.ppm"));
    let rows = parse_csv(&fs::read_to_string(d.join("r.csv")).unwrap());
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["sample_0_composite.ppm", "sample_2_composite.ppm", "mean"]);
    assert_eq!(code(&lemart(d, &["eval"])), 2);
}

#[test]
fn eval_quantized_matches_float_on_disk_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scenes(&d.join("in"), 2, 32);
    assert_eq!(code(&lemart(d, &["generate", "--input", "in", "--out", "out"])), 0);
    let m = "out/sample_manifest.jsonl";
    assert_eq!(code(&lemart(d, &["eval", "--manifest", m, "--csv", "f.csv"])), 0);
    assert_eq!(code(&lemart(d, &["eval", "--manifest", m, "--csv", "q.csv", "--quantized", "true"])), 0);
    // images read from disk are already 8-bit, so both paths agree
    let f = parse_csv(&fs::read_to_string(d.join("f.csv")).unwrap());
    let q = parse_csv(&fs::read_to_string(d.join("q.csv")).unwrap());
    for (a, b) in f[1..].iter().zip(&q[1..]) {
        let (x, y): (f64, f64) = (a[1].parse().unwrap(), b[1].parse().unwrap());
        assert!((x - y).abs() <= 1e-9 * x.max(1.0));
    }
}

#[test]
fn inspect_transforms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pnm::write_image(d.join("s.ppm"), &toy::scene(16, 16, 2)).unwrap();
    let out = lemart(d, &["inspect", "brightness", "--c", "1.0", "--input", "s.ppm", "--output", "b.ppm"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(d.join("s.ppm")).unwrap(), fs::read(d.join("b.ppm")).unwrap());

    let strip: Vec<f64> = (0..64).flat_map(|x| [x as f64 / 63.0; 3]).collect();
    pnm::write_image(d.join("strip.ppm"), &ImageBuffer::new(1, 64, 3, strip).unwrap()).unwrap();
    let out = lemart(d, &["inspect", "posterize", "--n", "1", "--input", "strip.ppm", "--output", "p.ppm"]);
    assert_eq!(code(&out), 0);
    let view = lemart::image::to_u8(&pnm::read_image(d.join("p.ppm")).unwrap());
    for c in 0..3 {
        let mut levels: Vec<u8> = view.data().iter().skip(c).step_by(3).copied().collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, [0, 128]);
    }

    for args in [
        &["inspect", "swirl", "--input", "s.ppm", "--output", "x.ppm"][..],
        &["inspect", "contrast", "--input", "s.ppm", "--output", "x.ppm"],
        &["inspect", "blur", "--k1", "4", "--input", "s.ppm", "--output", "x.ppm"],
        &["inspect", "posterize", "--n", "9", "--input", "s.ppm", "--output", "x.ppm"],
    ] {
        assert_eq!(code(&lemart(d, args)), 2, "{args:?}");
    }
    let out = lemart(d, &["inspect", "blur", "--k1", "3", "--k2", "5", "--input", "s.ppm", "--output", "x.ppm"]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&lemart(d, &["inspect", "equalize", "--input", "none.ppm", "--output", "x.ppm"])), 1);
}

#[test]
fn train_demo_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |sub: &str, threads: &str| {
        let base = d.join(sub);
        fs::create_dir_all(&base).unwrap();
        let args = ["train-demo", "--steps", "3", "--batch-size", "2", "--images", "4", "--seed", "5", "--threads", threads, "--out", "m.ckpt"];
        let out = lemart(&base, &args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        tree(&base)
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "3"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["m.ckpt", "m.ckpt.config.txt", "m.ckpt.json", "m.ckpt.loss.csv"]);
    let csv = String::from_utf8(a[3].1.clone()).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("step,lr,loss\n0,"));

    let base = d.join("a");
    let args = ["train-demo", "--stage", "finetune", "--fraction", "0.5", "--from-checkpoint", "m.ckpt", "--steps", "2", "--images", "4", "--out", "f.ckpt"];
    assert_eq!(code(&lemart(&base, &args)), 0);
    assert!(base.join("f.ckpt.loss.csv").exists());
    assert_eq!(code(&lemart(&base, &["train-demo", "--preset", "huge", "--out", "x"])), 2);
    assert_eq!(code(&lemart(&base, &["train-demo", "--stage", "finetune", "--fraction", "0", "--steps", "1", "--out", "x"])), 1);
    assert_eq!(code(&lemart(&base, &["train-demo", "--from-checkpoint", "missing.ckpt", "--out", "x"])), 1);
}
