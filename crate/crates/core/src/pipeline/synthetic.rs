use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

use super::data::{ImagePair, ModalityTag, PAIR_DIM_MULTIPLE};

/// Deterministic MR/CT-like phantom pairs for tests and ablations.
///
/// Each pair shares an elliptical "head" support. Source A carries smooth
/// soft-tissue blobs with a faint texture; source B is dark inside the head
/// apart from a bright skull ring and a few dense spots, so the two sources
/// hold complementary structure.
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Result<Vec<ImagePair>> {
    if size == 0 || size % PAIR_DIM_MULTIPLE != 0 {
        return Err(Error::dim(format!(
            "synthetic size {size} must be a positive multiple of {PAIR_DIM_MULTIPLE}"
        )));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
            let (a, b) = phantom(size, &mut rng);
            ImagePair::new(format!("syn{i:03}"), a, b, ModalityTag::CtMr)
        })
        .collect()
}

fn phantom(size: usize, rng: &mut ChaCha8Rng) -> (Image, Image) {
    let s = size as f64;
    let cx = s * rng.random_range(0.45..0.55);
    let cy = s * rng.random_range(0.45..0.55);
    let rx = s * rng.random_range(0.33..0.42);
    let ry = s * rng.random_range(0.36..0.45);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                cx + rx * rng.random_range(-0.6..0.6),
                cy + ry * rng.random_range(-0.6..0.6),
                s * rng.random_range(0.05..0.14),
                rng.random_range(0.15..0.45),
            )
        })
        .collect();
    let spots: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                cx + rx * rng.random_range(-0.5..0.5),
                cy + ry * rng.random_range(-0.5..0.5),
                s * rng.random_range(0.02..0.05),
            )
        })
        .collect();
    let freq = rng.random_range(0.3..0.8);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let ring = rng.random_range(0.08..0.14);

    let a = Image::from_fn(size, size, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let r = ((px - cx) / rx).hypot((py - cy) / ry);
        if r > 1.0 {
            return 0.0;
        }
        let mut v = 0.25 + 0.05 * (freq * px + phase).sin() * (freq * py).cos();
        for &(bx, by, bs, amp) in &blobs {
            let d2 = (px - bx).powi(2) + (py - by).powi(2);
            v += amp * (-d2 / (2.0 * bs * bs)).exp();
        }
        v.clamp(0.0, 1.0)
    });
    let b = Image::from_fn(size, size, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let r = ((px - cx) / rx).hypot((py - cy) / ry);
        let mut v = if r > 1.0 {
            0.0
        } else if r > 1.0 - ring {
            0.9
        } else {
            0.12
        };
        for &(sx, sy, ss) in &spots {
            if (px - sx).hypot(py - sy) < ss {
                v = 0.75;
            }
        }
        v
    });
    (a, b)
}
