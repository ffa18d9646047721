//! Multi-scale visual information fidelity for fusion.
//!
//! Four scales `k = 1..=4` use a Gaussian window of size `N = 2^(5−k) + 1`
//! and `σ = N / 5`. Before scales 2–4 the previous scale is filtered with
//! the current window ('valid') and subsampled by two. At each scale and for
//! each source `S ∈ {A, B}`, local statistics from the window give the gain
//! `g = σSF / σS²` and residual `σv² = σF² − g σSF` (with the usual
//! degenerate-window guards), and
//!
//! - `VID = Σ log2(1 + g² σS² / (σv² + σn²))`,
//! - `VIND = Σ log2(1 + σS² / σn²)`,
//!
//! with the visual noise `σn² = 0.005 · 255²`. Sums run over window positions
//! and over both sources, so sources carrying more visual information weigh
//! more. The scale score is `VID / VIND` (0 when `VIND = 0`) and the final
//! value is the weighted sum with `p = [1, 0, 0.15, 1] / 2.15`. Scales whose
//! window no longer fits are dropped and the remaining weights renormalized;
//! at least the first scale (17×17) must fit.

use crate::error::{Error, Result};
use crate::filters::{filter_valid, gaussian_1d};
use crate::image::Image;

use super::common::triple;

pub const VIFF_NOISE_VARIANCE: f64 = 0.005 * 255.0 * 255.0;
pub const VIFF_SCALE_WEIGHTS: [f64; 4] = [1.0 / 2.15, 0.0, 0.15 / 2.15, 1.0 / 2.15];
const EPS: f64 = 1e-10;

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn filter(&self, k: &[f64]) -> Plane {
        let (data, h, w) = filter_valid(&self.data, self.h, self.w, k);
        Plane { h, w, data }
    }

    fn subsample(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut data = Vec::with_capacity(h * w);
        for y in (0..self.h).step_by(2) {
            for x in (0..self.w).step_by(2) {
                data.push(self.data[y * self.w + x]);
            }
        }
        Plane { h, w, data }
    }

    fn fits(&self, n: usize) -> bool {
        self.h >= n && self.w >= n
    }
}

fn window_size(scale: usize) -> usize {
    (1 << (5 - scale)) + 1
}

/// Adds this source's (VID, VIND) contributions at one scale.
fn information(s: &Plane, f: &Plane, k: &[f64]) -> (f64, f64) {
    let sq = |p: &Plane| -> Vec<f64> { p.data.iter().map(|v| v * v).collect() };
    let mu_s = s.filter(k).data;
    let mu_f = f.filter(k).data;
    let ss = Plane { h: s.h, w: s.w, data: sq(s) }.filter(k).data;
    let ff = Plane { h: f.h, w: f.w, data: sq(f) }.filter(k).data;
    let sf = Plane {
        h: s.h,
        w: s.w,
        data: s.data.iter().zip(&f.data).map(|(p, q)| p * q).collect(),
    }
    .filter(k)
    .data;
    let mut vid = 0.0;
    let mut vind = 0.0;
    for i in 0..mu_s.len() {
        let mut var_s = (ss[i] - mu_s[i] * mu_s[i]).max(0.0);
        let var_f = (ff[i] - mu_f[i] * mu_f[i]).max(0.0);
        let cov = sf[i] - mu_s[i] * mu_f[i];
        let mut g = cov / (var_s + EPS);
        let mut sv = var_f - g * cov;
        if var_s < EPS {
            g = 0.0;
            sv = var_f;
            var_s = 0.0;
        }
        if var_f < EPS {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = var_f;
            g = 0.0;
        }
        sv = sv.max(EPS);
        vid += (1.0 + g * g * var_s / (sv + VIFF_NOISE_VARIANCE)).log2();
        vind += (1.0 + var_s / VIFF_NOISE_VARIANCE).log2();
    }
    (vid, vind)
}

/// Visual information fidelity of `f` with respect to both sources.
pub fn viff(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    let first = window_size(1);
    if f.h < first || f.w < first {
        return Err(Error::dim(format!(
            "VIFF needs at least {first}x{first} pixels, got {}x{}",
            f.h, f.w
        )));
    }
    let plane = |l: super::common::Levels| Plane {
        h: l.h,
        w: l.w,
        data: l.data,
    };
    let (mut pf, mut pa, mut pb) = (plane(f), plane(a), plane(b));
    let mut total = 0.0;
    let mut weight = 0.0;
    for scale in 1..=4 {
        let n = window_size(scale);
        let k = gaussian_1d(n, n as f64 / 5.0);
        if scale > 1 {
            if !pf.fits(n) {
                break;
            }
            pf = pf.filter(&k).subsample();
            pa = pa.filter(&k).subsample();
            pb = pb.filter(&k).subsample();
        }
        if !pf.fits(n) {
            break;
        }
        let (vid_a, vind_a) = information(&pa, &pf, &k);
        let (vid_b, vind_b) = information(&pb, &pf, &k);
        let vind = vind_a + vind_b;
        let score = if vind > 0.0 { (vid_a + vid_b) / vind } else { 0.0 };
        let p = VIFF_SCALE_WEIGHTS[scale - 1];
        total += p * score;
        weight += p;
    }
    Ok(total / weight)
}
