//! Xydeas–Petrović edge-transfer metric.
//!
//! Edge strength `g = sqrt(sx² + sy²)` and orientation `α = atan(sy / sx)`
//! come from the 3×3 Sobel pair (symmetric borders) on the 8-bit levels.
//! For each source `S`:
//!
//! - relative strength `G = min(gS, gF) / max(gS, gF)` (1 when both vanish),
//! - orientation agreement `Δ = 1 − |αS − αF| / (π/2)`,
//! - `Q = Γg / (1 + e^{κg (G − σg)}) · Γα / (1 + e^{κα (Δ − σα)})`,
//!
//! and the score is `Σ (Q_AF gA + Q_BF gB) / Σ (gA + gB)`, or 0 when neither
//! source has any edge. The sigmoid constants are the published ones; the
//! gains are normalized as `Γ = 1 + e^{κ (1 − σ)}` so that a perfect
//! transfer scores exactly 1.

use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::filters::sobel;
use crate::image::Image;

use super::common::{triple, Levels};

pub const QABF_G_KAPPA: f64 = -15.0;
pub const QABF_G_SIGMA: f64 = 0.5;
pub const QABF_ALPHA_KAPPA: f64 = -22.0;
pub const QABF_ALPHA_SIGMA: f64 = 0.8;

struct EdgeField {
    strength: Vec<f64>,
    orientation: Vec<f64>,
}

fn edge_field(l: &Levels) -> EdgeField {
    let img = Image {
        height: l.h,
        width: l.w,
        data: l.data.clone(),
    };
    let (sx, sy) = sobel(&img);
    let strength = sx.data.iter().zip(&sy.data).map(|(x, y)| x.hypot(*y)).collect();
    let orientation = sx
        .data
        .iter()
        .zip(&sy.data)
        .map(|(&x, &y)| {
            if x == 0.0 {
                if y == 0.0 {
                    0.0
                } else {
                    FRAC_PI_2
                }
            } else {
                (y / x).atan()
            }
        })
        .collect();
    EdgeField {
        strength,
        orientation,
    }
}

fn sigmoid_gain(kappa: f64, sigma: f64) -> f64 {
    1.0 + (kappa * (1.0 - sigma)).exp()
}

fn preservation(s: &EdgeField, f: &EdgeField, i: usize) -> f64 {
    let (gs, gf) = (s.strength[i], f.strength[i]);
    let g = if gs == gf {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let delta = 1.0 - (s.orientation[i] - f.orientation[i]).abs() / FRAC_PI_2;
    let qg = sigmoid_gain(QABF_G_KAPPA, QABF_G_SIGMA)
        / (1.0 + (QABF_G_KAPPA * (g - QABF_G_SIGMA)).exp());
    let qa = sigmoid_gain(QABF_ALPHA_KAPPA, QABF_ALPHA_SIGMA)
        / (1.0 + (QABF_ALPHA_KAPPA * (delta - QABF_ALPHA_SIGMA)).exp());
    qg * qa
}

/// Edge-transfer quality `Q_AB/F ∈ [0, 1]`.
pub fn q_abf(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    let (ef, ea, eb) = (edge_field(&f), edge_field(&a), edge_field(&b));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..f.data.len() {
        let (wa, wb) = (ea.strength[i], eb.strength[i]);
        num += preservation(&ea, &ef, i) * wa + preservation(&eb, &ef, i) * wb;
        den += wa + wb;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}
