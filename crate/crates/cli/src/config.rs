use std::fs;
use std::path::{Path, PathBuf};

use medfuse::pipeline::{load_manifest, load_pairs, synthetic_dataset, ImagePair, ManifestEntry, TrainingConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Procedurally generated pairs, used instead of a manifest.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

/// TOML run description shared by `train` and `ablate`.
///
/// ```toml
/// manifest = "pairs.csv"        # or a [synthetic] table
/// output_dir = "runs/exp1"
///
/// [training]
/// epochs = 30
/// pooling_mode = "wdepp"
/// ```
///
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub training: TrainingConfig,
}

/// Where the pairs come from, with paths already checked.
pub enum Source {
    Manifest(Vec<ManifestEntry>),
    Synthetic(SyntheticSpec),
}

pub struct RunPlan {
    pub source: Source,
    pub output_dir: PathBuf,
    pub training: TrainingConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("invalid run config: {e}")))
    }
}

/// Read, validate and resolve a run config. Checks every input path and the
/// output location, but writes nothing.
pub fn load_plan(path: &Path, seed: Option<u64>) -> CliResult<RunPlan> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = RunConfigFile::parse(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut training = cfg.training;
    if let Some(s) = seed {
        training.seed = s;
    }
    training.validate()?;

    let source = match (cfg.manifest, cfg.synthetic) {
        (Some(m), None) => {
            let m = resolve(&m);
            if !m.is_file() {
                return Err(CliError::usage(format!("manifest {} does not exist", m.display())));
            }
            let entries = load_manifest(&m)?;
            if entries.is_empty() {
                return Err(CliError::data(format!("manifest {} lists no pairs", m.display())));
            }
            for e in &entries {
                for p in [&e.path_a, &e.path_b] {
                    if !p.is_file() {
                        return Err(CliError::data(format!(
                            "pair `{}`: image {} does not exist",
                            e.pair_id,
                            p.display()
                        )));
                    }
                }
            }
            Source::Manifest(entries)
        }
        (None, Some(s)) => {
            if s.count == 0 || s.size == 0 || s.size % 8 != 0 {
                return Err(CliError::usage("synthetic.count must be >= 1 and synthetic.size a positive multiple of 8"));
            }
            Source::Synthetic(s)
        }
        _ => return Err(CliError::usage("run config needs exactly one of `manifest` or `[synthetic]`")),
    };

    let output_dir = resolve(&cfg.output_dir);
    if output_dir.exists() && !output_dir.is_dir() {
        return Err(CliError::usage(format!("output_dir {} is not a directory", output_dir.display())));
    }
    Ok(RunPlan { source, output_dir, training })
}

impl RunPlan {
    pub fn pairs(&self) -> CliResult<Vec<ImagePair>> {
        Ok(match &self.source {
            Source::Manifest(entries) => load_pairs(entries)?,
            Source::Synthetic(s) => synthetic_dataset(s.count, s.size, s.seed)?,
        })
    }
}
