//! Single-level 2D orthonormal Haar analysis and synthesis.
//!
//! For every 2×2 block `[a b; c d]` of a plane the analysis produces
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
//! ```
//!
//! `lh` is lowpass along rows and highpass along columns, `hl` the converse.
//! The transform is orthonormal, so synthesis is its transpose.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Tensor};

/// The four subbands of a single-level decomposition, each `(H/2) × (W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    pub source_height: usize,
    pub source_width: usize,
}

impl SubbandSet {
    fn check(&self) -> Result<()> {
        let s = self.ll.shape();
        if self.lh.shape() != s || self.hl.shape() != s || self.hh.shape() != s {
            return Err(Error::dim("subband shapes differ"));
        }
        if self.source_height != 2 * s[2] || self.source_width != 2 * s[3] {
            return Err(Error::dim(format!(
                "subbands {}x{} cannot synthesize a {}x{} map",
                s[2], s[3], self.source_height, self.source_width
            )));
        }
        Ok(())
    }

    fn zeros_like(t: &Tensor) -> Tensor {
        Tensor::zeros(t.n, t.c, t.h, t.w)
    }
}

pub(crate) fn ensure_even(x: &FeatureMap) -> Result<()> {
    if x.h < 2 || x.w < 2 || x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::dim(format!(
            "wavelet analysis needs even spatial dims >= 2, got {}x{}",
            x.h, x.w
        )));
    }
    Ok(())
}

/// Forward transform, independently per channel.
pub fn dwt2(x: &FeatureMap) -> Result<SubbandSet> {
    ensure_even(x)?;
    x.ensure_finite("wavelet input")?;
    let (hh_, hw) = (x.h / 2, x.w / 2);
    let mut ll = Tensor::zeros(x.n, x.c, hh_, hw);
    let mut lh = ll.clone();
    let mut hl = ll.clone();
    let mut hh = ll.clone();
    let w = x.w;
    let half_plane = hh_ * hw;
    for p in 0..x.num_planes() {
        let src = &x.data[p * x.plane_len()..(p + 1) * x.plane_len()];
        let base = p * half_plane;
        for i in 0..hh_ {
            let r0 = &src[2 * i * w..(2 * i + 1) * w];
            let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..hw {
                let (a, b, c, d) = (r0[2 * j], r0[2 * j + 1], r1[2 * j], r1[2 * j + 1]);
                let k = base + i * hw + j;
                ll.data[k] = 0.5 * (a + b + c + d);
                lh.data[k] = 0.5 * (a + b - c - d);
                hl.data[k] = 0.5 * (a - b + c - d);
                hh.data[k] = 0.5 * (a - b - c + d);
            }
        }
    }
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        source_height: x.h,
        source_width: x.w,
    })
}

/// Inverse transform.
pub fn idwt2(s: &SubbandSet) -> Result<FeatureMap> {
    s.check()?;
    let (n, c, hh_, hw) = (s.ll.n, s.ll.c, s.ll.h, s.ll.w);
    let w = s.source_width;
    let mut out = Tensor::zeros(n, c, s.source_height, w);
    let half_plane = hh_ * hw;
    let plane = out.plane_len();
    for p in 0..n * c {
        let base = p * half_plane;
        let dst = &mut out.data[p * plane..(p + 1) * plane];
        for i in 0..hh_ {
            for j in 0..hw {
                let k = base + i * hw + j;
                let (ll, lh, hl, hh) = (s.ll.data[k], s.lh.data[k], s.hl.data[k], s.hh.data[k]);
                dst[2 * i * w + 2 * j] = 0.5 * (ll + lh + hl + hh);
                dst[2 * i * w + 2 * j + 1] = 0.5 * (ll + lh - hl - hh);
                dst[(2 * i + 1) * w + 2 * j] = 0.5 * (ll - lh + hl - hh);
                dst[(2 * i + 1) * w + 2 * j + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    Ok(out)
}

/// Synthesis from LL alone, with all detail bands zeroed.
pub fn lowpass_component(s: &SubbandSet) -> Result<FeatureMap> {
    s.check()?;
    let z = SubbandSet::zeros_like(&s.ll);
    idwt2(&SubbandSet {
        ll: s.ll.clone(),
        lh: z.clone(),
        hl: z.clone(),
        hh: z,
        source_height: s.source_height,
        source_width: s.source_width,
    })
}

/// Synthesis from the three detail bands, with LL zeroed.
pub fn highpass_component(s: &SubbandSet) -> Result<FeatureMap> {
    s.check()?;
    idwt2(&SubbandSet {
        ll: SubbandSet::zeros_like(&s.ll),
        lh: s.lh.clone(),
        hl: s.hl.clone(),
        hh: s.hh.clone(),
        source_height: s.source_height,
        source_width: s.source_width,
    })
}

/// Single-pass lowpass reconstruction of one even-sized `h × w` plane.
/// Bit-identical to analysis followed by LL-only synthesis.
pub(crate) fn lowpass_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let (t, b) = (2 * i * w + 2 * j, (2 * i + 1) * w + 2 * j);
            let ll = 0.5 * (src[t] + src[t + 1] + src[b] + src[b + 1]);
            let v = 0.5 * ll;
            dst[t] = v;
            dst[t + 1] = v;
            dst[b] = v;
            dst[b + 1] = v;
        }
    }
}

/// Single-pass highpass reconstruction of one even-sized `h × w` plane.
/// Bit-identical to analysis followed by detail-only synthesis.
pub(crate) fn highpass_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            let (t, b) = (2 * i * w + 2 * j, (2 * i + 1) * w + 2 * j);
            let (p, q, r, s) = (src[t], src[t + 1], src[b], src[b + 1]);
            let lh = 0.5 * (p + q - r - s);
            let hl = 0.5 * (p - q + r - s);
            let hh = 0.5 * (p - q - r + s);
            dst[t] = 0.5 * (lh + hl + hh);
            dst[t + 1] = 0.5 * (lh - hl - hh);
            dst[b] = 0.5 * (-lh + hl - hh);
            dst[b + 1] = 0.5 * (-lh - hl + hh);
        }
    }
}

/// Pad odd spatial dims to even by repeating the last row/column.
///
/// Standalone helper; the network itself only accepts even sizes.
pub fn pad_to_even(x: &FeatureMap) -> FeatureMap {
    let h = x.h + x.h % 2;
    let w = x.w + x.w % 2;
    if h == x.h && w == x.w {
        return x.clone();
    }
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for p in 0..x.num_planes() {
        for y in 0..h {
            let sy = y.min(x.h - 1);
            for xx in 0..w {
                let sx = xx.min(x.w - 1);
                out.data[p * h * w + y * w + xx] = x.data[p * x.plane_len() + sy * x.w + sx];
            }
        }
    }
    out
}

/// Undo [`pad_to_even`].
pub fn crop_to(x: &FeatureMap, h: usize, w: usize) -> FeatureMap {
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for p in 0..x.num_planes() {
        for y in 0..h {
            let src = p * x.plane_len() + y * x.w;
            out.data[p * h * w + y * w..p * h * w + (y + 1) * w]
                .copy_from_slice(&x.data[src..src + w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..c * h * w).map(|_| rng.random::<f64>()).collect();
        Tensor::from_vec(1, c, h, w, data).unwrap()
    }

    /// Brute-force separable filter bank: correlate rows then columns with the
    /// Haar analysis filters and keep even positions.
    fn filter_bank_oracle(img: &[Vec<f64>]) -> [Vec<Vec<f64>>; 4] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lo = [s, s];
        let hi = [s, -s];
        let h = img.len();
        let w = img[0].len();
        let rows = |f: &[f64; 2]| -> Vec<Vec<f64>> {
            img.iter()
                .map(|r| (0..w / 2).map(|j| f[0] * r[2 * j] + f[1] * r[2 * j + 1]).collect())
                .collect()
        };
        let cols = |m: &Vec<Vec<f64>>, f: &[f64; 2]| -> Vec<Vec<f64>> {
            (0..h / 2)
                .map(|i| {
                    (0..m[0].len())
                        .map(|j| f[0] * m[2 * i][j] + f[1] * m[2 * i + 1][j])
                        .collect()
                })
                .collect()
        };
        let row_lo = rows(&lo);
        let row_hi = rows(&hi);
        // (row filter, column filter): ll = (lo, lo), lh = (lo, hi), hl = (hi, lo), hh = (hi, hi)
        [
            cols(&row_lo, &lo),
            cols(&row_lo, &hi),
            cols(&row_hi, &lo),
            cols(&row_hi, &hi),
        ]
    }

    fn ramp4() -> Tensor {
        let data = (0..16).map(|k| ((k / 4) + (k % 4)) as f64 / 6.0).collect();
        Tensor::from_vec(1, 1, 4, 4, data).unwrap()
    }

    fn checkerboard(n: usize) -> Tensor {
        let data = (0..n * n).map(|k| ((k / n + k % n) % 2) as f64).collect();
        Tensor::from_vec(1, 1, n, n, data).unwrap()
    }

    #[test]
    fn constant_block_has_only_ll() {
        let x = Tensor::filled(1, 1, 2, 2, 0.3);
        let s = dwt2(&x).unwrap();
        assert!((s.ll.data[0] - 0.6).abs() < 1e-15);
        assert_eq!(s.lh.data[0], 0.0);
        assert_eq!(s.hl.data[0], 0.0);
        assert_eq!(s.hh.data[0], 0.0);
    }

    #[test]
    fn ramp_matches_filter_bank_oracle() {
        let x = ramp4();
        let img: Vec<Vec<f64>> = (0..4).map(|i| x.data[i * 4..i * 4 + 4].to_vec()).collect();
        let oracle = filter_bank_oracle(&img);
        let s = dwt2(&x).unwrap();
        for (band, expect) in [&s.ll, &s.lh, &s.hl, &s.hh].iter().zip(oracle.iter()) {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((band.data[i * 2 + j] - expect[i][j]).abs() < 1e-12);
                }
            }
        }
        let back = idwt2(&s).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn checkerboard_splits_into_half_and_residual() {
        let x = checkerboard(4);
        let s = dwt2(&x).unwrap();
        let low = lowpass_component(&s).unwrap();
        let high = highpass_component(&s).unwrap();
        assert!(low.data.iter().all(|v| (v - 0.5).abs() < 1e-12));
        for (h, v) in high.data.iter().zip(&x.data) {
            assert!((h - (v - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_subbands_synthesize_zero() {
        let z = Tensor::zeros(1, 3, 4, 5);
        let s = SubbandSet {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            source_height: 8,
            source_width: 10,
        };
        let x = idwt2(&s).unwrap();
        assert_eq!(x.shape(), [1, 3, 8, 10]);
        assert!(x.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_components() {
        let x = Tensor::filled(1, 2, 6, 4, 0.7);
        let s = dwt2(&x).unwrap();
        assert!(lowpass_component(&s).unwrap().max_abs_diff(&x) < 1e-12);
        assert!(highpass_component(&s).unwrap().data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn errors() {
        assert!(matches!(dwt2(&Tensor::zeros(1, 1, 3, 4)), Err(Error::Dimension(_))));
        let mut x = Tensor::zeros(1, 1, 4, 4);
        x.data[3] = f64::NAN;
        assert!(matches!(dwt2(&x), Err(Error::Validation(_))));
        let mut s = dwt2(&Tensor::zeros(1, 1, 4, 4)).unwrap();
        s.hh = Tensor::zeros(1, 1, 2, 3);
        assert!(matches!(idwt2(&s), Err(Error::Dimension(_))));
        assert!(lowpass_component(&s).is_err());
    }

    #[test]
    fn pad_and_crop() {
        let x = Tensor::from_vec(1, 1, 3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let p = pad_to_even(&x);
        assert_eq!(p.shape(), [1, 1, 4, 4]);
        assert_eq!(p.at(0, 0, 3, 3), 8.0);
        assert_eq!(p.at(0, 0, 0, 3), 2.0);
        assert!(dwt2(&p).is_ok());
        assert_eq!(crop_to(&p, 3, 3), x);
    }

    #[test]
    fn channel_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_map(&mut rng, 2, 6, 8);
        let b = random_map(&mut rng, 3, 6, 8);
        let joint = dwt2(&Tensor::concat_channels(&[&a, &b]).unwrap()).unwrap();
        let (sa, sb) = (dwt2(&a).unwrap(), dwt2(&b).unwrap());
        for (j, (pa, pb)) in [
            (&joint.ll, (&sa.ll, &sb.ll)),
            (&joint.hh, (&sa.hh, &sb.hh)),
        ] {
            let cat = Tensor::concat_channels(&[pa, pb]).unwrap();
            assert_eq!(j, &cat);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reconstruction_additivity_parseval(seed in any::<u64>(), hh in 1usize..16, hw in 1usize..16, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_map(&mut rng, c, 2 * hh, 2 * hw);
            let s = dwt2(&x).unwrap();
            prop_assert!(idwt2(&s).unwrap().max_abs_diff(&x) < 1e-6);
            let low = lowpass_component(&s).unwrap();
            let high = highpass_component(&s).unwrap();
            prop_assert!(low.add(&high).unwrap().max_abs_diff(&x) < 1e-6);
            prop_assert!((low.sum_sq() + high.sum_sq() - x.sum_sq()).abs() < 1e-5);
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_map(&mut rng, 2, 8, 6);
            let y = random_map(&mut rng, 2, 8, 6);
            let combo = x.scale(a).add(&y.scale(b)).unwrap();
            let sc = dwt2(&combo).unwrap();
            let (sx, sy) = (dwt2(&x).unwrap(), dwt2(&y).unwrap());
            for (c, (p, q)) in [(&sc.ll, (&sx.ll, &sy.ll)), (&sc.lh, (&sx.lh, &sy.lh)), (&sc.hl, (&sx.hl, &sy.hl)), (&sc.hh, (&sx.hh, &sy.hh))] {
                let expect = p.scale(a).add(&q.scale(b)).unwrap();
                prop_assert!(c.max_abs_diff(&expect) < 1e-6);
            }
        }
    }
}
