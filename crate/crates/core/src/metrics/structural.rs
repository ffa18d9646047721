//! Windowed SSIM-family fusion metrics.
//!
//! Both metrics slide a 7×7 uniform window over every valid position of the
//! 8-bit levels. Per window the stabilized SSIM
//! `(2 μx μy + C1)(2 σxy + C2) / ((μx² + μy² + C1)(σx² + σy² + C2))`
//! is used with `C1 = (0.01 · 255)²`, `C2 = (0.03 · 255)²`, clamped to
//! `[0, 1]`. Variances are population variances within the window, computed
//! from exact integer window sums.

use crate::error::{Error, Result};
use crate::image::Image;

use super::common::{triple, Levels};

pub const WINDOW: usize = 7;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
/// SSIM(A, B) at or above this marks a window as redundant for Q_Y.
const YANG_REDUNDANCY: f64 = 0.75;

/// First and second moments over every valid 7×7 window.
struct WindowMoments {
    mean_a: Vec<f64>,
    mean_b: Vec<f64>,
    mean_f: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    var_f: Vec<f64>,
    cov_ab: Vec<f64>,
    cov_af: Vec<f64>,
    cov_bf: Vec<f64>,
}

/// Sum over every valid window. Exact, since the inputs are small integers.
fn window_sums(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &v[y * w..(y + 1) * w];
        let mut s: f64 = line[..WINDOW].iter().sum();
        rows[y * ow] = s;
        for x in 1..ow {
            s += line[x + WINDOW - 1] - line[x - 1];
            rows[y * ow + x] = s;
        }
    }
    let oh = h - WINDOW + 1;
    let mut out = vec![0.0; oh * ow];
    for x in 0..ow {
        let mut s: f64 = (0..WINDOW).map(|y| rows[y * ow + x]).sum();
        out[x] = s;
        for y in 1..oh {
            s += rows[(y + WINDOW - 1) * ow + x] - rows[(y - 1) * ow + x];
            out[y * ow + x] = s;
        }
    }
    out
}

fn window_moments(f: &Levels, a: &Levels, b: &Levels) -> Result<WindowMoments> {
    let (h, w) = (f.h, f.w);
    if h < WINDOW || w < WINDOW {
        return Err(Error::dim(format!(
            "image {h}x{w} smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    let n = (WINDOW * WINDOW) as f64;
    let sums = |v: &[f64]| window_sums(v, h, w);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (sa, sb, sf) = (sums(&a.data), sums(&b.data), sums(&f.data));
    // n·Σxy − Σx·Σy is an exact integer, so equal-and-opposite covariances
    // cancel exactly.
    let central = |p: &Levels, q: &Levels, sp: &[f64], sq: &[f64]| {
        sums(&prod(&p.data, &q.data))
            .iter()
            .zip(sp.iter().zip(sq))
            .map(|(s, (x, y))| (n * s - x * y) / (n * n))
            .collect::<Vec<_>>()
    };
    let mean = |s: &[f64]| s.iter().map(|v| v / n).collect::<Vec<_>>();
    Ok(WindowMoments {
        var_a: central(a, a, &sa, &sa),
        var_b: central(b, b, &sb, &sb),
        var_f: central(f, f, &sf, &sf),
        cov_ab: central(a, b, &sa, &sb),
        cov_af: central(a, f, &sa, &sf),
        cov_bf: central(b, f, &sb, &sf),
        mean_a: mean(&sa),
        mean_b: mean(&sb),
        mean_f: mean(&sf),
    })
}

#[inline]
fn window_ssim(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let s = (2.0 * mx * my + C1) * (2.0 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    s.clamp(0.0, 1.0)
}

/// Cvejić metric: per window,
/// `sim · SSIM(A, F) + (1 − sim) · SSIM(B, F)` with
/// `sim = σAF / (σAF + σBF)` clipped to `[0, 1]` (0.5 when the denominator
/// vanishes), averaged over windows.
pub fn q_c(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    let m = window_moments(&f, &a, &b)?;
    let n = m.mean_f.len();
    let mut acc = 0.0;
    for i in 0..n {
        let qa = window_ssim(m.mean_a[i], m.mean_f[i], m.var_a[i], m.var_f[i], m.cov_af[i]);
        let qb = window_ssim(m.mean_b[i], m.mean_f[i], m.var_b[i], m.var_f[i], m.cov_bf[i]);
        let den = m.cov_af[i] + m.cov_bf[i];
        let (sa, sb) = if den == 0.0 {
            (0.5, 0.5)
        } else {
            ((m.cov_af[i] / den).clamp(0.0, 1.0), (m.cov_bf[i] / den).clamp(0.0, 1.0))
        };
        acc += sa * qa + sb * qb;
    }
    Ok((acc / n as f64).clamp(0.0, 1.0))
}

/// Yang metric: per window, when `SSIM(A, B) ≥ 0.75` the saliency blend
/// `λ · SSIM(A, F) + (1 − λ) · SSIM(B, F)` with `λ = σA² / (σA² + σB²)`
/// (0.5 when both vanish), otherwise `max(SSIM(A, F), SSIM(B, F))`;
/// averaged over windows.
pub fn q_y(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    let m = window_moments(&f, &a, &b)?;
    let n = m.mean_f.len();
    let mut acc = 0.0;
    for i in 0..n {
        let qa = window_ssim(m.mean_a[i], m.mean_f[i], m.var_a[i], m.var_f[i], m.cov_af[i]);
        let qb = window_ssim(m.mean_b[i], m.mean_f[i], m.var_b[i], m.var_f[i], m.cov_bf[i]);
        let qab = window_ssim(m.mean_a[i], m.mean_b[i], m.var_a[i], m.var_b[i], m.cov_ab[i]);
        acc += if qab >= YANG_REDUNDANCY {
            let s = m.var_a[i] + m.var_b[i];
            if s == 0.0 {
                0.5 * (qa + qb)
            } else {
                (m.var_a[i] * qa + m.var_b[i] * qb) / s
            }
        } else {
            qa.max(qb)
        };
    }
    Ok((acc / n as f64).clamp(0.0, 1.0))
}
