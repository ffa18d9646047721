use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::losses::{batch_loss_with_grad, LossBreakdown};
use crate::network::ModelState;
use crate::optim::Adam;

use super::config::TrainingConfig;
use super::patches::{patch_batch, PatchPair};

pub const LOSS_CSV_HEADER: &str = "step,intensity,gradient,structure,total";

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    /// One entry per optimizer step, in order.
    pub history: Vec<LossBreakdown>,
    /// Final checkpoint, when a checkpoint directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Train a freshly initialized model on `patches`.
///
/// Each epoch visits the patches in a seeded shuffled order in minibatches
/// of `batch_size` (the last one may be smaller). With `checkpoint_dir`, a
/// checkpoint `epoch_NNN.ckpt` is written after every epoch and `final.ckpt`
/// at the end; a zero-epoch run writes the initialization.
pub fn train(cfg: &TrainingConfig, patches: &[PatchPair], checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::invalid("training needs at least one patch"));
    }
    let size = (patches[0].a.height, patches[0].a.width);
    if patches
        .iter()
        .any(|p| (p.a.height, p.a.width) != size || !p.a.same_shape(&p.b))
    {
        return Err(Error::dim("all training patches must share one size"));
    }
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut model = ModelState::build(cfg.network_config(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut history = Vec::new();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if history.len() >= max_steps {
                break 'epochs;
            }
            let batch: Vec<&PatchPair> = chunk.iter().map(|&i| &patches[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch)?;
            history.push(loss);
        }
        log::info!(
            "epoch {}/{} done, step {}, last total loss {:.6}",
            epoch + 1,
            cfg.epochs,
            history.len(),
            history.last().map_or(f64::NAN, |l| l.total)
        );
        if let Some(dir) = checkpoint_dir {
            checkpoint::save(&model, &dir.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
        }
    }

    let checkpoint = match checkpoint_dir {
        Some(dir) => {
            let p = dir.join("final.ckpt");
            checkpoint::save(&model, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        history,
        checkpoint,
    })
}

/// One forward/backward/update step; aborts on a non-finite loss.
pub(crate) fn train_step(model: &mut ModelState, adam: &mut Adam, batch: &[&PatchPair]) -> Result<LossBreakdown> {
    let x = patch_batch(batch)?;
    let step = model.training_step + 1;
    model.zero_grad();
    let trace = model.forward_train(&x)?;
    let (loss, grad) = batch_loss_with_grad(trace.output(), &x)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "training diverged at step {step}: total loss {}",
            loss.total
        )));
    }
    model.backward(&trace, &grad)?;
    adam.step(model.named_params_mut().into_iter().map(|(_, p)| p));
    if let Some((name, _)) = model
        .named_params()
        .into_iter()
        .find(|(_, p)| p.value.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric(format!(
            "training diverged at step {step}: parameter {name} became non-finite"
        )));
    }
    model.training_step = step;
    Ok(loss)
}

/// Write the per-step loss history as `step,intensity,gradient,structure,total`
/// with shortest round-trip float formatting.
pub fn write_loss_csv<W: Write>(mut out: W, history: &[LossBreakdown]) -> Result<()> {
    let io = |e| Error::io("<loss csv>", e);
    writeln!(out, "{LOSS_CSV_HEADER}").map_err(io)?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", i + 1, l.intensity, l.gradient, l.structure, l.total)
            .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_loss_csv(text: &str) -> Result<Vec<LossBreakdown>> {
    let bad = |m: String| Error::invalid(format!("malformed loss CSV: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_CSV_HEADER) {
        return Err(bad("missing header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("`{v}`"))))
                .collect::<Result<_>>()?;
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields in `{l}`")));
            }
            Ok(LossBreakdown {
                intensity: f[1],
                gradient: f[2],
                structure: f[3],
                total: f[4],
            })
        })
        .collect()
}
