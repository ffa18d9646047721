//! Training objective: intensity + gradient + structure, all unit-weighted.
//!
//! Every term also has an analytic gradient with respect to the fused image,
//! used by the training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    downsample2, downsample2_adjoint, filter_valid, filter_valid_adjoint, gaussian_1d, sobel,
    sobel_adjoint,
};
use crate::image::Image;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub intensity: f64,
    pub gradient: f64,
    pub structure: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(intensity: f64, gradient: f64, structure: f64) -> Self {
        LossBreakdown {
            intensity,
            gradient,
            structure,
            total: intensity + gradient + structure,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.intensity.is_finite()
            && self.gradient.is_finite()
            && self.structure.is_finite()
            && self.total.is_finite()
    }
}

fn check3(f: &Image, a: &Image, b: &Image) -> Result<()> {
    f.ensure_same_shape(a, "fused vs source A")?;
    f.ensure_same_shape(b, "fused vs source B")
}

/// Mean of `(f - max(a, b))²`.
pub fn intensity_loss(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    Ok(intensity_loss_grad(f, a, b)?.0)
}

fn intensity_loss_grad(f: &Image, a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    check3(f, a, b)?;
    let n = f.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; f.len()];
    for i in 0..f.len() {
        let r = f.data[i] - a.data[i].max(b.data[i]);
        loss += r * r;
        grad[i] = 2.0 * r / n;
    }
    Ok((loss / n, grad))
}

/// Mean over pixels of the squared Sobel-response differences, summed over
/// both directions.
pub fn gradient_loss(f: &Image, a: &Image) -> Result<f64> {
    Ok(gradient_loss_grad(f, a)?.0)
}

fn gradient_loss_grad(f: &Image, a: &Image) -> Result<(f64, Vec<f64>)> {
    f.ensure_same_shape(a, "fused vs source A")?;
    let (fx, fy) = sobel(f);
    let (ax, ay) = sobel(a);
    let n = f.len() as f64;
    let mut dx = fx;
    let mut dy = fy;
    let mut loss = 0.0;
    for i in 0..dx.len() {
        dx.data[i] -= ax.data[i];
        dy.data[i] -= ay.data[i];
        loss += dx.data[i] * dx.data[i] + dy.data[i] * dy.data[i];
    }
    let mut grad = sobel_adjoint(&dx, &dy).data;
    grad.iter_mut().for_each(|g| *g *= 2.0 / n);
    Ok((loss / n, grad))
}

/// Single-scale SSIM statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimTerms {
    /// Mean of luminance × contrast-structure.
    pub ssim: f64,
    /// Mean contrast-structure term alone.
    pub cs: f64,
}

struct ScaleMaps {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    s_xx: Vec<f64>,
    s_yy: Vec<f64>,
    s_xy: Vec<f64>,
}

fn scale_maps(x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64]) -> ScaleMaps {
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let (mu_x, _, _) = filter_valid(x, h, w, k);
    let (mu_y, _, _) = filter_valid(y, h, w, k);
    let (mut s_xx, _, _) = filter_valid(&prod(x, x), h, w, k);
    let (mut s_yy, _, _) = filter_valid(&prod(y, y), h, w, k);
    let (mut s_xy, _, _) = filter_valid(&prod(x, y), h, w, k);
    for i in 0..mu_x.len() {
        s_xx[i] -= mu_x[i] * mu_x[i];
        s_yy[i] -= mu_y[i] * mu_y[i];
        s_xy[i] -= mu_x[i] * mu_y[i];
    }
    ScaleMaps {
        mu_x,
        mu_y,
        s_xx,
        s_yy,
        s_xy,
    }
}

impl ScaleMaps {
    fn terms(&self) -> SsimTerms {
        let mut cs_sum = 0.0;
        let mut ssim_sum = 0.0;
        for i in 0..self.mu_x.len() {
            let (l, cs) = self.l_cs(i);
            cs_sum += cs;
            ssim_sum += l * cs;
        }
        let p = self.mu_x.len() as f64;
        SsimTerms {
            ssim: ssim_sum / p,
            cs: cs_sum / p,
        }
    }

    #[inline]
    fn l_cs(&self, i: usize) -> (f64, f64) {
        let (mx, my) = (self.mu_x[i], self.mu_y[i]);
        let l = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
        let cs = (2.0 * self.s_xy[i] + SSIM_C2) / (self.s_xx[i] + self.s_yy[i] + SSIM_C2);
        (l, cs)
    }

    /// Gradient of `scale · mean(S)` with respect to the y plane, where S is
    /// the cs map or (when `with_luminance`) the full SSIM map.
    fn grad_y(&self, x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64], with_luminance: bool, scale: f64) -> Vec<f64> {
        let p = self.mu_x.len() as f64;
        let n = self.mu_x.len();
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; n];
        let mut gc = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (self.mu_x[i], self.mu_y[i]);
            let n2 = 2.0 * self.s_xy[i] + SSIM_C2;
            let d2 = self.s_xx[i] + self.s_yy[i] + SSIM_C2;
            let cs = n2 / d2;
            let dcs_dsxy = 2.0 / d2;
            let dcs_dsyy = -n2 / (d2 * d2);
            let (d_muy, d_syy, d_sxy) = if with_luminance {
                let n1 = 2.0 * mx * my + SSIM_C1;
                let d1 = mx * mx + my * my + SSIM_C1;
                let l = n1 / d1;
                let dl_dmuy = (2.0 * mx * d1 - n1 * 2.0 * my) / (d1 * d1);
                (cs * dl_dmuy, l * dcs_dsyy, l * dcs_dsxy)
            } else {
                (0.0, dcs_dsyy, dcs_dsxy)
            };
            let s = scale / p;
            ga[i] = s * (d_muy - 2.0 * my * d_syy - mx * d_sxy);
            gb[i] = s * d_syy;
            gc[i] = s * d_sxy;
        }
        let ta = filter_valid_adjoint(&ga, h, w, k);
        let tb = filter_valid_adjoint(&gb, h, w, k);
        let tc = filter_valid_adjoint(&gc, h, w, k);
        (0..h * w)
            .map(|q| ta[q] + 2.0 * y[q] * tb[q] + x[q] * tc[q])
            .collect()
    }
}

fn window() -> Vec<f64> {
    gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
}

/// Single-scale SSIM with the 11×11, σ = 1.5 Gaussian window.
pub fn ssim_terms(x: &Image, y: &Image) -> Result<SsimTerms> {
    x.ensure_same_shape(y, "ssim operands")?;
    if x.height < SSIM_WINDOW || x.width < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            x.height, x.width
        )));
    }
    Ok(scale_maps(&x.data, &y.data, x.height, x.width, &window()).terms())
}

/// Number of dyadic scales an `h × w` image supports with the SSIM window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    (0..MS_SSIM_WEIGHTS.len())
        .take_while(|&j| (h >> j) >= SSIM_WINDOW && (w >> j) >= SSIM_WINDOW)
        .count()
}

/// Multi-scale SSIM.
///
/// Scales are truncated to what the image supports and the weights
/// renormalized. With a single scale the plain SSIM is returned (range
/// `(-1, 1]`); with several, negative per-scale terms are clamped to zero
/// before the weighted geometric mean.
pub fn ms_ssim(x: &Image, y: &Image) -> Result<f64> {
    Ok(ms_ssim_impl(x, y, false)?.0)
}

/// MS-SSIM and its gradient with respect to `y`.
pub fn ms_ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Vec<f64>)> {
    let (v, g) = ms_ssim_impl(x, y, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ms_ssim_impl(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    x.ensure_same_shape(y, "ms-ssim operands")?;
    let m = ms_ssim_scales(x.height, x.width);
    if m == 0 {
        return Err(Error::dim(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            x.height, x.width
        )));
    }
    let k = window();
    let wsum: f64 = MS_SSIM_WEIGHTS[..m].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..m].iter().map(|w| w / wsum).collect();

    let mut pyramid: Vec<(Vec<f64>, Vec<f64>, usize, usize)> =
        vec![(x.data.clone(), y.data.clone(), x.height, x.width)];
    for _ in 1..m {
        let (px, py, h, w) = pyramid.last().unwrap();
        let (dx, dh, dw) = downsample2(px, *h, *w);
        let (dy, _, _) = downsample2(py, *h, *w);
        pyramid.push((dx, dy, dh, dw));
    }
    let maps: Vec<ScaleMaps> = pyramid
        .iter()
        .map(|(px, py, h, w)| scale_maps(px, py, *h, *w, &k))
        .collect();
    let raw: Vec<f64> = maps
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let t = s.terms();
            if j + 1 == m {
                t.ssim
            } else {
                t.cs
            }
        })
        .collect();

    let (value, dvalue): (f64, Vec<f64>) = if m == 1 {
        (raw[0], vec![1.0])
    } else {
        let clamped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
        let value: f64 = clamped
            .iter()
            .zip(&weights)
            .map(|(v, w)| v.powf(*w))
            .product();
        let d = (0..m)
            .map(|j| {
                if clamped[j] <= 0.0 {
                    return 0.0;
                }
                let others: f64 = (0..m)
                    .filter(|&i| i != j)
                    .map(|i| clamped[i].powf(weights[i]))
                    .product();
                weights[j] * clamped[j].powf(weights[j] - 1.0) * others
            })
            .collect();
        (value, d)
    };
    if !want_grad {
        return Ok((value, None));
    }

    let mut carry: Option<Vec<f64>> = None;
    for j in (0..m).rev() {
        let (px, py, h, w) = &pyramid[j];
        let mut g = maps[j].grad_y(px, py, *h, *w, &k, j + 1 == m, dvalue[j]);
        if let Some(c) = carry.take() {
            for (gi, ci) in g.iter_mut().zip(c) {
                *gi += ci;
            }
        }
        if j > 0 {
            let (_, _, ph, pw) = &pyramid[j - 1];
            carry = Some(downsample2_adjoint(&g, *ph, *pw));
        } else {
            carry = Some(g);
        }
    }
    Ok((value, carry))
}

/// `1 - (ms_ssim(a, f) + ms_ssim(b, f)) / 2`.
pub fn structure_loss(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    check3(f, a, b)?;
    Ok(1.0 - 0.5 * (ms_ssim(a, f)? + ms_ssim(b, f)?))
}

fn structure_loss_grad(f: &Image, a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    check3(f, a, b)?;
    let (va, ga) = ms_ssim_with_grad(a, f)?;
    let (vb, gb) = ms_ssim_with_grad(b, f)?;
    let grad = ga.iter().zip(&gb).map(|(p, q)| -0.5 * (p + q)).collect();
    Ok((1.0 - 0.5 * (va + vb), grad))
}

/// All three terms with unit weights. `a` is the MR source.
pub fn total_loss(f: &Image, a: &Image, b: &Image) -> Result<LossBreakdown> {
    check3(f, a, b)?;
    Ok(LossBreakdown::new(
        intensity_loss(f, a, b)?,
        gradient_loss(f, a)?,
        structure_loss(f, a, b)?,
    ))
}

/// [`total_loss`] plus `∂total/∂f`.
pub fn total_loss_with_grad(f: &Image, a: &Image, b: &Image) -> Result<(LossBreakdown, Image)> {
    let (li, gi) = intensity_loss_grad(f, a, b)?;
    let (lg, gg) = gradient_loss_grad(f, a)?;
    let (ls, gs) = structure_loss_grad(f, a, b)?;
    let grad = (0..f.len()).map(|i| gi[i] + gg[i] + gs[i]).collect();
    Ok((
        LossBreakdown::new(li, lg, ls),
        Image::new(f.height, f.width, grad)?,
    ))
}

fn plane_image(t: &Tensor, n: usize, c: usize) -> Image {
    Image {
        height: t.h,
        width: t.w,
        data: t.plane(n, c).to_vec(),
    }
}

/// Batch-mean loss for network outputs `fused` (`N×1×H×W`) against the
/// stacked sources (`N×2×H×W`, channel 0 = MR), with its gradient.
pub fn batch_loss_with_grad(fused: &Tensor, sources: &Tensor) -> Result<(LossBreakdown, Tensor)> {
    if fused.c != 1 || sources.c != 2 || fused.n != sources.n || fused.h != sources.h || fused.w != sources.w {
        return Err(Error::dim("batch loss expects N×1×H×W output and N×2×H×W sources"));
    }
    let n = fused.n as f64;
    let mut acc = LossBreakdown::default();
    let mut grad = Tensor::zeros(fused.n, 1, fused.h, fused.w);
    for s in 0..fused.n {
        let f = plane_image(fused, s, 0);
        let a = plane_image(sources, s, 0);
        let b = plane_image(sources, s, 1);
        let (l, g) = total_loss_with_grad(&f, &a, &b)?;
        acc.intensity += l.intensity / n;
        acc.gradient += l.gradient / n;
        acc.structure += l.structure / n;
        for (d, v) in grad.plane_mut(s, 0).iter_mut().zip(&g.data) {
            *d = v / n;
        }
    }
    Ok((LossBreakdown::new(acc.intensity, acc.gradient, acc.structure), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    #[test]
    fn intensity_cases() {
        let a = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let b = Image::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = Image::filled(2, 2, 0.5);
        assert_eq!(intensity_loss(&f, &a, &b).unwrap(), 0.25);
        let z = Image::filled(3, 3, 0.0);
        assert_eq!(intensity_loss(&Image::filled(3, 3, 1.0), &z, &z).unwrap(), 1.0);
        let max = Image::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(intensity_loss(&max, &a, &b).unwrap(), 0.0);
        assert!(intensity_loss(&f, &a, &Image::filled(2, 3, 0.0)).is_err());
    }

    #[test]
    fn gradient_loss_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 9, 7);
        assert_eq!(gradient_loss(&a, &a).unwrap(), 0.0);
        let v = gradient_loss(&Image::filled(6, 6, 0.2), &Image::filled(6, 6, 0.9)).unwrap();
        assert!(v < 1e-28);
    }

    #[test]
    fn ms_ssim_self_similarity_and_scale_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(11, 11), (32, 40), (64, 64)] {
            let x = random(&mut rng, h, w);
            assert!((ms_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ms_ssim_scales(64, 64), 3);
        assert_eq!(ms_ssim_scales(256, 256), 5);
        assert_eq!(ms_ssim_scales(16, 16), 1);
        assert_eq!(ms_ssim_scales(10, 64), 0);
        let small = Image::filled(10, 10, 0.0);
        assert!(matches!(ms_ssim(&small, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn total_breakdown_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (f, a, b) = (random(&mut rng, 16, 16), random(&mut rng, 16, 16), random(&mut rng, 16, 16));
        let l = total_loss(&f, &a, &b).unwrap();
        assert_eq!(l.total, l.intensity + l.gradient + l.structure);
        let (l2, _) = total_loss_with_grad(&f, &a, &b).unwrap();
        assert_eq!(l, l2);
    }
}
