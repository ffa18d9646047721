use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_raster, Image, Raster};

use super::color::rgb_to_yuv;

/// Source images must have both dimensions divisible by this.
pub const PAIR_DIM_MULTIPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityTag {
    CtMr,
    MrSpect,
    MrPet,
}

impl ModalityTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModalityTag::CtMr => "ct_mr",
            ModalityTag::MrSpect => "mr_spect",
            ModalityTag::MrPet => "mr_pet",
        }
    }
}

impl fmt::Display for ModalityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ct_mr" => Ok(ModalityTag::CtMr),
            "mr_spect" => Ok(ModalityTag::MrSpect),
            "mr_pet" => Ok(ModalityTag::MrPet),
            other => Err(Error::invalid(format!(
                "unknown modality tag `{other}` (expected ct_mr, mr_spect or mr_pet)"
            ))),
        }
    }
}

/// A registered source pair. `source_a` is always the MR image; `source_b`
/// is CT or the luminance of a functional scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub pair_id: String,
    pub source_a: Image,
    pub source_b: Image,
    pub modality_tag: ModalityTag,
}

impl ImagePair {
    pub fn new(
        pair_id: impl Into<String>,
        source_a: Image,
        source_b: Image,
        modality_tag: ModalityTag,
    ) -> Result<Self> {
        let pair_id = pair_id.into();
        source_a.ensure_same_shape(&source_b, &format!("pair `{pair_id}`"))?;
        if source_a.height % PAIR_DIM_MULTIPLE != 0 || source_a.width % PAIR_DIM_MULTIPLE != 0 {
            return Err(Error::dim(format!(
                "pair `{pair_id}` is {}x{}, not divisible by {PAIR_DIM_MULTIPLE}",
                source_a.height, source_a.width
            )));
        }
        source_a.validate()?;
        source_b.validate()?;
        Ok(ImagePair {
            pair_id,
            source_a,
            source_b,
            modality_tag,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.source_a.height, self.source_a.width)
    }
}

/// One manifest line with paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub modality_tag: ModalityTag,
}

/// Parse `pair_id, path_a, path_b, modality_tag` lines. Blank lines, `#`
/// comments and a leading header line are ignored.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if out.is_empty() && fields.first() == Some(&"pair_id") {
            continue;
        }
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::invalid(format!(
                "manifest line {}: expected `pair_id, path_a, path_b, modality_tag`",
                lineno + 1
            )));
        }
        let tag: ModalityTag = fields[3]
            .parse()
            .map_err(|e| Error::invalid(format!("manifest line {}: {e}", lineno + 1)))?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::invalid(format!(
                "manifest line {}: duplicate pair_id `{}`",
                lineno + 1,
                fields[0]
            )));
        }
        out.push(ManifestEntry {
            pair_id: fields[0].to_string(),
            path_a: base_dir.join(fields[1]),
            path_b: base_dir.join(fields[2]),
            modality_tag: tag,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Load every pair in the manifest. A colour second source contributes its
/// luminance; the MR source must be grayscale.
pub fn load_pairs(entries: &[ManifestEntry]) -> Result<Vec<ImagePair>> {
    entries
        .iter()
        .map(|e| {
            let a = match load_raster(&e.path_a)? {
                Raster::Gray(i) => i,
                Raster::Color(_) => {
                    return Err(Error::format(&e.path_a, "the MR source must be grayscale"))
                }
            };
            let b = match load_raster(&e.path_b)? {
                Raster::Gray(i) => i,
                Raster::Color(c) => rgb_to_yuv(&c)?.y,
            };
            ImagePair::new(e.pair_id.clone(), a, b, e.modality_tag)
        })
        .collect()
}

/// Seeded split by pair into `(train, held_out)`. The held-out set has
/// `round(n · fraction)` pairs (at least one when `fraction > 0` and
/// `n ≥ 2`); both outputs are sorted by `pair_id`.
pub fn split_pairs(pairs: &[ImagePair], fraction: f64, seed: u64) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} must lie in [0, 1)")));
    }
    let mut sorted: Vec<&ImagePair> = pairs.iter().collect();
    sorted.sort_by(|x, y| x.pair_id.cmp(&y.pair_id));
    let n = sorted.len();
    let mut held = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        held = held.max(1);
    }
    held = held.min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held_set: HashSet<usize> = order[..held].iter().copied().collect();
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (i, p) in sorted.into_iter().enumerate() {
        if held_set.contains(&i) {
            hold.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    Ok((train, hold))
}
