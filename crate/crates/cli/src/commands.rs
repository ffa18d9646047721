use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use medfuse::image::{load_raster, save_color, save_gray, Raster};
use medfuse::metrics::{evaluate_all, write_csv, MetricRow};
use medfuse::pipeline::{
    extract_patches, fuse_color_yuv, fuse_pair, rgb_to_yuv, run_ablation, split_pairs, train, write_loss_csv,
    ImagePair, ModalityTag,
};
use medfuse::{checkpoint, Image};

use crate::config::load_plan;
use crate::error::{CliError, CliResult};

/// Write `bytes` next to `path` and rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let io = |e| CliError::Core(medfuse::Error::Io { path: path.to_path_buf(), source: e });
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Core(medfuse::Error::Io { path: dir.to_path_buf(), source: e }))
}

fn gray_input(path: &Path, role: &str) -> CliResult<Image> {
    match load_raster(path)? {
        Raster::Gray(i) => Ok(i),
        Raster::Color(_) => Err(CliError::data(format!("{role} {} must be grayscale", path.display()))),
    }
}

/// Grayscale input, or the luminance of a colour one.
fn luma_input(path: &Path) -> CliResult<Image> {
    Ok(match load_raster(path)? {
        Raster::Gray(i) => i,
        Raster::Color(c) => rgb_to_yuv(&c)?.y,
    })
}

pub fn train_cmd(config: &Path, seed: Option<u64>) -> CliResult<()> {
    let plan = load_plan(config, seed)?;
    let pairs = plan.pairs()?;
    let cfg = &plan.training;
    let (train_pairs, held) = split_pairs(&pairs, cfg.validation_fraction, cfg.seed)?;
    let patches = extract_patches(&train_pairs, cfg);
    if patches.is_empty() {
        return Err(CliError::data("no training patches survived filtering"));
    }
    log::info!(
        "training on {} patches from {} pairs ({} held out)",
        patches.len(),
        train_pairs.len(),
        held.len()
    );
    create_dir(&plan.output_dir)?;
    let out = train(cfg, &patches, Some(&plan.output_dir.join("checkpoints")))?;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &out.history)?;
    write_atomic(&plan.output_dir.join("loss.csv"), &csv)?;
    let held_ids: String = held.iter().map(|p| format!("{}\n", p.pair_id)).collect();
    write_atomic(&plan.output_dir.join("held_out.txt"), held_ids.as_bytes())?;
    let ckpt = out.checkpoint.expect("checkpoint directory was given");
    println!("checkpoint {}", ckpt.display());
    println!("loss_csv {}", plan.output_dir.join("loss.csv").display());
    Ok(())
}

pub struct FuseArgs {
    pub checkpoint: PathBuf,
    pub source_a: PathBuf,
    pub source_b: PathBuf,
    pub out: PathBuf,
    pub color: bool,
}

pub fn fuse_cmd(args: &FuseArgs) -> CliResult<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let a = gray_input(&args.source_a, "source A")?;
    let runtime = match (load_raster(&args.source_b)?, args.color) {
        (Raster::Gray(b), false) => {
            let pair = ImagePair::new("cli", a, b, ModalityTag::CtMr)?;
            let fused = fuse_pair(&model, &pair)?;
            save_gray(&fused.image, &args.out)?;
            fused.runtime_seconds
        }
        (Raster::Color(c), true) => {
            let fused = fuse_color_yuv(&model, &a, &c)?;
            save_color(&fused.rgb, &args.out)?;
            fused.runtime_seconds
        }
        (Raster::Color(_), false) => {
            return Err(CliError::data(format!(
                "source B {} is an RGB image; pass --color to fuse its luminance and keep its chrominance",
                args.source_b.display()
            )))
        }
        (Raster::Gray(_), true) => {
            return Err(CliError::data(format!(
                "--color expects an RGB source B, but {} is grayscale; drop --color",
                args.source_b.display()
            )))
        }
    };
    println!("fused {} in {runtime:.4} s", args.out.display());
    Ok(())
}

pub struct EvalArgs {
    pub fused: PathBuf,
    pub source_a: PathBuf,
    pub source_b: PathBuf,
    pub out_csv: PathBuf,
    pub pair_id: Option<String>,
    pub runtime: f64,
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    let f = luma_input(&args.fused)?;
    let a = gray_input(&args.source_a, "source A")?;
    let b = luma_input(&args.source_b)?;
    let report = evaluate_all(&f, &a, &b, args.runtime)?;
    let pair_id = args.pair_id.clone().unwrap_or_else(|| {
        args.fused
            .file_stem()
            .map_or_else(|| "fused".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let mut csv = Vec::new();
    write_csv(&mut csv, &[MetricRow { pair_id, report }])?;
    write_atomic(&args.out_csv, &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

pub fn ablate_cmd(config: &Path, seed: Option<u64>) -> CliResult<()> {
    let plan = load_plan(config, seed)?;
    let pairs = plan.pairs()?;
    create_dir(&plan.output_dir)?;
    let report = run_ablation(&plan.training, &pairs, Some(&plan.output_dir))?;
    let table = report.table();
    write_atomic(&plan.output_dir.join("ablation_table.txt"), table.as_bytes())?;
    write_atomic(&plan.output_dir.join("ablation_summary.csv"), report.csv().as_bytes())?;
    for m in &report.modes {
        let mut csv = Vec::new();
        write_csv(&mut csv, &m.rows)?;
        write_atomic(&plan.output_dir.join(format!("metrics_{}.csv", m.mode)), &csv)?;
        let mut loss = Vec::new();
        write_loss_csv(&mut loss, &m.history)?;
        write_atomic(&plan.output_dir.join(format!("loss_{}.csv", m.mode)), &loss)?;
    }
    print!("{table}");
    Ok(())
}
