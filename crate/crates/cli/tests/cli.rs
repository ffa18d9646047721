use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medfuse::image::{load_gray, save_color, save_gray};
use medfuse::metrics::{evaluate_all, read_csv};
use medfuse::pipeline::{fuse_pair, run_ablation, synthetic_dataset, ImagePair, ModalityTag, TrainingConfig};
use medfuse::{build_model, checkpoint, ColorImage, Image, NetworkConfig};
use medfuse::network::PoolingMode;

fn medfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medfuse"))
        .args(args)
        .env("MEDFUSE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_TRAINING: &str = "[training]\npatch_size = 32\nepochs = 1\nbatch_size = 2\nmax_steps = 2\nbase_channels = 4\nvalidation_fraction = 0.34\npooling_mode = \"max\"\n";

fn tiny_training() -> TrainingConfig {
    TrainingConfig {
        patch_size: 32,
        epochs: 1,
        batch_size: 2,
        max_steps: Some(2),
        base_channels: 4,
        validation_fraction: 0.34,
        pooling_mode: PoolingMode::Max,
        ..TrainingConfig::default()
    }
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn gray(seed: u64) -> Image {
    Image::from_fn(32, 32, |i, j| ((i * 7 + j * 3 + seed as usize * 11) % 17) as f64 / 16.0)
}

fn write_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let a = dir.join("a.png");
    let b = dir.join("b.png");
    save_gray(&gray(1), &a).unwrap();
    save_gray(&gray(2), &b).unwrap();
    (a, b)
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let model = build_model(NetworkConfig::with_depth(4, 4, PoolingMode::Wdepp), 3).unwrap();
    let p = dir.join("model.ckpt");
    checkpoint::save(&model, &p).unwrap();
    p
}

#[test]
fn help_and_version_exit_zero() {
    assert!(medfuse(&["--help"]).status.success());
    assert!(medfuse(&["fuse", "--help"]).status.success());
    assert!(medfuse(&["--version"]).status.success());
}

#[test]
fn bad_arguments_are_usage_errors() {
    let o = medfuse(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error code=2 kind=usage"), "{}", stderr(&o));
}

#[test]
fn train_writes_checkpoint_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("output_dir = \"out\"\n[synthetic]\ncount = 3\nsize = 32\n{TINY_TRAINING}");
    let cfg = write_config(dir.path(), &body);
    let o = medfuse(&["train", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("checkpoints/final.ckpt").is_file());
    assert!(out.join("checkpoints/epoch_001.ckpt").is_file());
    let first = fs::read(out.join("loss.csv")).unwrap();
    let first_ckpt = fs::read(out.join("checkpoints/final.ckpt")).unwrap();
    assert!(String::from_utf8_lossy(&first).lines().count() >= 2);

    let o = medfuse(&["train", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, fs::read(out.join("loss.csv")).unwrap());
    assert_eq!(first_ckpt, fs::read(out.join("checkpoints/final.ckpt")).unwrap());

    let o = medfuse(&["train", s(&cfg), "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(first, fs::read(out.join("loss.csv")).unwrap());
}

#[test]
fn train_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synthetic_dataset(3, 32, 4).unwrap();
    let mut manifest = String::from("pair_id, path_a, path_b, modality_tag\n");
    for p in &pairs {
        save_gray(&p.source_a, &dir.path().join(format!("{}_a.png", p.pair_id))).unwrap();
        save_gray(&p.source_b, &dir.path().join(format!("{}_b.png", p.pair_id))).unwrap();
        manifest.push_str(&format!("{0}, {0}_a.png, {0}_b.png, ct_mr\n", p.pair_id));
    }
    fs::write(dir.path().join("pairs.csv"), manifest).unwrap();
    let cfg = write_config(dir.path(), &format!("manifest = \"pairs.csv\"\noutput_dir = \"out\"\n{TINY_TRAINING}"));
    let o = medfuse(&["train", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/checkpoints/final.ckpt").is_file());
}

#[test]
fn missing_inputs_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("manifest = \"nope.csv\"\noutput_dir = \"out\"\n{TINY_TRAINING}"));
    let o = medfuse(&["train", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(!dir.path().join("out").exists());

    fs::write(dir.path().join("pairs.csv"), "p1, a.png, missing.png, ct_mr\n").unwrap();
    save_gray(&gray(0), &dir.path().join("a.png")).unwrap();
    let cfg = write_config(dir.path(), &format!("manifest = \"pairs.csv\"\noutput_dir = \"out\"\n{TINY_TRAINING}"));
    let o = medfuse(&["train", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.png"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_errors_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        "output_dir = \"out\"\n[synthetic]\ncount = 3\nsize = 32\n[training]\nlr = 0.1\n",
        "output_dir = \"out\"\n[synthetic]\ncount = 3\nsize = 32\n[training]\npatch_size = 30\n",
        "output_dir = \"out\"\n",
        "output_dir = \"out\"\nmanifest = \"m.csv\"\n[synthetic]\ncount = 3\nsize = 32\n",
    ] {
        let cfg = write_config(dir.path(), body);
        let o = medfuse(&["train", s(&cfg)]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", stderr(&o));
        assert!(!dir.path().join("out").exists());
    }
}

#[test]
fn fuse_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let ckpt = tiny_checkpoint(dir.path());
    let out = dir.path().join("fused.png");
    let o = medfuse(&["fuse", s(&ckpt), s(&a), s(&b), s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let model = checkpoint::load(&ckpt).unwrap();
    let pair = ImagePair::new("x", load_gray(&a).unwrap(), load_gray(&b).unwrap(), ModalityTag::CtMr).unwrap();
    let expected = fuse_pair(&model, &pair).unwrap().image;
    let got = load_gray(&out).unwrap();
    assert_eq!((got.height, got.width), (32, 32));
    for (g, e) in got.data.iter().zip(&expected.data) {
        assert!((g - (e * 255.0).round() / 255.0).abs() < 1e-9);
    }
}

#[test]
fn fuse_color_requires_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b_gray) = write_pair(dir.path());
    let ckpt = tiny_checkpoint(dir.path());
    let color = ColorImage::from_planes(gray(3), gray(4), gray(5)).unwrap();
    let b = dir.path().join("b_rgb.png");
    save_color(&color, &b).unwrap();
    let out = dir.path().join("fused.png");

    let o = medfuse(&["fuse", s(&ckpt), s(&a), s(&b), s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("--color"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = medfuse(&["fuse", s(&ckpt), s(&a), s(&b_gray), s(&out), "--color"]);
    assert_eq!(o.status.code(), Some(3));

    let o = medfuse(&["fuse", s(&ckpt), s(&a), s(&b), s(&out), "--color"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(matches!(medfuse::image::load_raster(&out).unwrap(), medfuse::image::Raster::Color(_)));
}

#[test]
fn fuse_rejects_bad_checkpoint_and_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = write_pair(dir.path());
    let ckpt = tiny_checkpoint(dir.path());
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let out = dir.path().join("f.png");
    let o = medfuse(&["fuse", s(&junk), s(&a), s(&a), s(&out)]);
    assert_eq!(o.status.code(), Some(3));

    let small = dir.path().join("small.png");
    save_gray(&Image::from_fn(16, 16, |_, _| 0.5), &small).unwrap();
    let o = medfuse(&["fuse", s(&ckpt), s(&a), s(&small), s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn eval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let f = dir.path().join("fused.png");
    save_gray(&gray(7), &f).unwrap();
    let csv = dir.path().join("m.csv");
    let o = medfuse(&["eval", s(&f), s(&a), s(&b), s(&csv), "--pair-id", "p7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].pair_id, "p7");
    let expected = evaluate_all(&load_gray(&f).unwrap(), &load_gray(&a).unwrap(), &load_gray(&b).unwrap(), 0.0).unwrap();
    let (g, e) = (rows[0].report.values(), expected.values());
    for (x, y) in g.iter().zip(&e) {
        assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
    }

    let first = fs::read(&csv).unwrap();
    assert!(medfuse(&["eval", s(&f), s(&a), s(&b), s(&csv), "--pair-id", "p7"]).status.success());
    assert_eq!(first, fs::read(&csv).unwrap());
}

#[test]
fn eval_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let broken = dir.path().join("broken.png");
    fs::write(&broken, b"\x89PNG garbage").unwrap();
    let csv = dir.path().join("m.csv");
    let o = medfuse(&["eval", s(&broken), s(&a), s(&b), s(&csv)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!csv.exists());
    let o = medfuse(&["eval", s(&a), s(&a), s(&b), s(&csv), "--runtime", "-1"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn ablate_reports_three_modes_matching_library() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("output_dir = \"out\"\n[synthetic]\ncount = 3\nsize = 32\nseed = 2\n{TINY_TRAINING}");
    let cfg = write_config(dir.path(), &body);
    let o = medfuse(&["ablate", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    for m in ["max", "average", "wdepp"] {
        assert!(table.lines().next().unwrap().contains(m), "{table}");
        assert!(dir.path().join(format!("out/{m}/final.ckpt")).is_file());
    }

    let report = run_ablation(&tiny_training(), &synthetic_dataset(3, 32, 2).unwrap(), None).unwrap();
    for summary in &report.modes {
        let path = dir.path().join(format!("out/metrics_{}.csv", summary.mode));
        let rows = read_csv(fs::File::open(path).unwrap()).unwrap();
        assert_eq!(rows.len(), summary.rows.len());
        for (got, want) in rows.iter().zip(&summary.rows) {
            assert_eq!(got.pair_id, want.pair_id);
            let (g, w) = (got.report.values(), want.report.values());
            for k in 0..9 {
                assert!((g[k] - w[k]).abs() <= 1e-8 * w[k].abs().max(1.0), "{k}: {} vs {}", g[k], w[k]);
            }
        }
    }
}

#[test]
fn invalid_thread_count_is_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_medfuse"))
        .args(["eval", "a", "b", "c", "d"])
        .env("MEDFUSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
