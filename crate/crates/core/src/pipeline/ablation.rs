use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate_all, MetricRow, METRIC_NAMES};
use crate::network::{ModelState, PoolingMode};

use super::config::TrainingConfig;
use super::data::{split_pairs, ImagePair};
use super::inference::fuse_pair;
use super::patches::extract_patches;
use super::train::train;

const ROW_LABELS: [&str; 10] = ["EN", "SD", "SF", "Q_AB/F", "MI", "Q_C", "Q_Y", "SCD", "VIFF", "Runtime (s)"];

/// Outcome for one pooling mode.
#[derive(Debug, Clone)]
pub struct ModeSummary {
    pub mode: PoolingMode,
    pub model: ModelState,
    pub history: Vec<LossBreakdown>,
    /// Held-out metric rows in `pair_id` order.
    pub rows: Vec<MetricRow>,
    /// Mean of the nine metrics then runtime, in [`METRIC_NAMES`] order.
    pub mean: [f64; 10],
    /// Sample standard deviation (zero for a single pair).
    pub std: [f64; 10],
}

/// Side-by-side comparison of the three pooling strategies.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub held_out: Vec<String>,
    pub modes: Vec<ModeSummary>,
}

fn row_values(r: &MetricRow) -> [f64; 10] {
    let mut v = [0.0; 10];
    v[..9].copy_from_slice(&r.report.values());
    v[9] = r.report.runtime_seconds;
    v
}

fn mean_std(rows: &[MetricRow]) -> ([f64; 10], [f64; 10]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 10];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(row_values(r)) {
            *m += v / n;
        }
    }
    let mut std = [0.0; 10];
    if rows.len() > 1 {
        for r in rows {
            for (k, v) in row_values(r).iter().enumerate() {
                std[k] += (v - mean[k]).powi(2) / (n - 1.0);
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    (mean, std)
}

/// Train one seed-matched model per pooling mode on the training split of
/// `dataset` and score each on the held-out split.
///
/// The three runs share `cfg` except for `pooling_mode`. With `out_dir`,
/// each mode checkpoints into `out_dir/<mode>/`.
pub fn run_ablation(cfg: &TrainingConfig, dataset: &[ImagePair], out_dir: Option<&Path>) -> Result<AblationReport> {
    cfg.validate()?;
    let (train_pairs, held) = split_pairs(dataset, cfg.validation_fraction, cfg.seed)?;
    if held.is_empty() {
        return Err(Error::Config(
            "ablation needs a held-out split: raise validation_fraction or add pairs".into(),
        ));
    }
    let patches = extract_patches(&train_pairs, cfg);
    if patches.is_empty() {
        return Err(Error::invalid("no training patches survived filtering"));
    }
    log::info!(
        "ablation: {} training patches from {} pairs, {} held-out pairs",
        patches.len(),
        train_pairs.len(),
        held.len()
    );
    let mut modes = Vec::with_capacity(PoolingMode::ALL.len());
    for mode in PoolingMode::ALL {
        let run_cfg = TrainingConfig {
            pooling_mode: mode,
            ..cfg.clone()
        };
        let dir = out_dir.map(|d| d.join(mode.as_str()));
        let outcome = train(&run_cfg, &patches, dir.as_deref())?;
        let fused = held
            .iter()
            .map(|p| fuse_pair(&outcome.model, p))
            .collect::<Result<Vec<_>>>()?;
        let rows = held
            .par_iter()
            .zip(fused.par_iter())
            .map(|(p, f)| {
                Ok(MetricRow {
                    pair_id: p.pair_id.clone(),
                    report: evaluate_all(&f.image, &p.source_a, &p.source_b, f.runtime_seconds)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&rows);
        modes.push(ModeSummary {
            mode,
            model: outcome.model,
            history: outcome.history,
            rows,
            mean,
            std,
        });
    }
    Ok(AblationReport {
        held_out: held.into_iter().map(|p| p.pair_id).collect(),
        modes,
    })
}

impl AblationReport {
    /// Human-readable table: one column per pooling mode, one row per metric
    /// plus runtime, cells `mean ± std`.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "Metric");
        for m in &self.modes {
            let _ = write!(s, " | {:>24}", m.mode.as_str());
        }
        s.push('\n');
        for (k, label) in ROW_LABELS.iter().enumerate() {
            let _ = write!(s, "{label:<12}");
            for m in &self.modes {
                let cell = format!("{:.4} ± {:.4}", m.mean[k], m.std[k]);
                let _ = write!(s, " | {cell:>24}");
            }
            s.push('\n');
        }
        s
    }

    /// Machine-readable form of [`AblationReport::table`]:
    /// `metric,<mode>_mean,<mode>_std,...` with full precision.
    pub fn csv(&self) -> String {
        let mut s = String::from("metric");
        for m in &self.modes {
            let _ = write!(s, ",{0}_mean,{0}_std", m.mode.as_str());
        }
        s.push('\n');
        let names = METRIC_NAMES.iter().copied().chain(["runtime_s"]);
        for (k, name) in names.enumerate() {
            s.push_str(name);
            for m in &self.modes {
                let _ = write!(s, ",{},{}", m.mean[k], m.std[k]);
            }
            s.push('\n');
        }
        s
    }

    pub fn mode(&self, mode: PoolingMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}
