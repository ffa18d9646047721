use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

use super::config::TrainingConfig;
use super::data::ImagePair;

/// Co-located tiles of both sources.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub pair_id: String,
    /// Tile row and column index (not pixels).
    pub row: usize,
    pub col: usize,
    pub a: Image,
    pub b: Image,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

/// Non-overlapping `patch_size` tiles, kept when
/// `max(std(tile_a), std(tile_b)) ≥ patch_keep_threshold`, ordered by
/// `(pair_id, row, col)`. Images smaller than one patch are skipped with a
/// warning; partial tiles at the right and bottom edges are dropped.
pub fn extract_patches(pairs: &[ImagePair], cfg: &TrainingConfig) -> Vec<PatchPair> {
    let p = cfg.patch_size;
    let mut sorted: Vec<&ImagePair> = pairs.iter().collect();
    sorted.sort_by(|x, y| x.pair_id.cmp(&y.pair_id));
    let mut out = Vec::new();
    for pair in sorted {
        let (h, w) = pair.dims();
        if h < p || w < p {
            log::warn!("pair `{}` ({h}x{w}) is smaller than a {p}x{p} patch; skipped", pair.pair_id);
            continue;
        }
        for row in 0..h / p {
            for col in 0..w / p {
                let a = pair.source_a.crop(row * p, col * p, p, p);
                let b = pair.source_b.crop(row * p, col * p, p, p);
                if population_std(&a.data).max(population_std(&b.data)) >= cfg.patch_keep_threshold {
                    out.push(PatchPair {
                        pair_id: pair.pair_id.clone(),
                        row,
                        col,
                        a,
                        b,
                    });
                }
            }
        }
    }
    out
}

/// Stack patches into an `N × 2 × P × P` tensor (channel 0 = MR).
pub fn patch_batch(patches: &[&PatchPair]) -> Result<Tensor> {
    let first = patches
        .first()
        .ok_or_else(|| Error::invalid("empty patch batch"))?;
    let (h, w) = (first.a.height, first.a.width);
    let mut data = Vec::with_capacity(patches.len() * 2 * h * w);
    for p in patches {
        if p.a.height != h || p.a.width != w || !p.a.same_shape(&p.b) {
            return Err(Error::dim("patches in a batch must share one size"));
        }
        data.extend_from_slice(&p.a.data);
        data.extend_from_slice(&p.b.data);
    }
    Tensor::from_vec(patches.len(), 2, h, w, data)
}
