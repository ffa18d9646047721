mod common;

use common::{assert_close, rng};
use medfuse::wavelet::{dwt2, highpass_component, idwt2, lowpass_component, pad_to_even, crop_to, SubbandSet};
use medfuse::{Error, Tensor};
use rand::Rng;

/// Separable two-tap filter bank: filter along columns, keep even outputs,
/// then filter along rows, keep even outputs.
fn filter_bank(x: &[f64], h: usize, w: usize, row_filter: [f64; 2], col_filter: [f64; 2]) -> Vec<f64> {
    let mut tmp = vec![0.0; h * (w / 2)];
    for y in 0..h {
        for c in 0..w / 2 {
            tmp[y * (w / 2) + c] = row_filter[0] * x[y * w + 2 * c] + row_filter[1] * x[y * w + 2 * c + 1];
        }
    }
    let mut out = vec![0.0; (h / 2) * (w / 2)];
    for r in 0..h / 2 {
        for c in 0..w / 2 {
            out[r * (w / 2) + c] = col_filter[0] * tmp[2 * r * (w / 2) + c] + col_filter[1] * tmp[(2 * r + 1) * (w / 2) + c];
        }
    }
    out
}

fn random_map(r: &mut rand_chacha::ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(1, c, h, w, (0..c * h * w).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn constant_block() {
    let s = dwt2(&Tensor::filled(1, 1, 2, 2, 0.3)).unwrap();
    assert_close(s.ll.data[0], 0.6, 1e-15, "ll");
    assert_eq!((s.lh.data[0], s.hl.data[0], s.hh.data[0]), (0.0, 0.0, 0.0));
}

#[test]
fn ramp_matches_filter_bank() {
    let x: Vec<f64> = (0..16).map(|i| (i / 4 + i % 4) as f64 / 6.0).collect();
    let s = dwt2(&Tensor::from_vec(1, 1, 4, 4, x.clone()).unwrap()).unwrap();
    let lo = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
    let hi = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
    let pairs = [(&s.ll, lo, lo), (&s.lh, lo, hi), (&s.hl, hi, lo), (&s.hh, hi, hi)];
    for (band, rf, cf) in pairs {
        for (g, w) in band.data.iter().zip(filter_bank(&x, 4, 4, rf, cf)) {
            assert_close(*g, w, 1e-12, "subband");
        }
    }
    let back = idwt2(&s).unwrap();
    for (g, w) in back.data.iter().zip(&x) {
        assert_close(*g, *w, 1e-12, "synthesis");
    }
}

#[test]
fn zero_subbands() {
    let z = Tensor::zeros(1, 2, 3, 5);
    let s = SubbandSet { ll: z.clone(), lh: z.clone(), hl: z.clone(), hh: z, source_height: 6, source_width: 10 };
    assert!(idwt2(&s).unwrap().data.iter().all(|&v| v == 0.0));
    let bad = SubbandSet { hh: Tensor::zeros(1, 2, 3, 4), ..s };
    assert!(matches!(idwt2(&bad), Err(Error::Dimension(_))));
}

#[test]
fn components_of_constant_and_checkerboard() {
    let s = dwt2(&Tensor::filled(1, 1, 4, 6, 0.8)).unwrap();
    assert!(lowpass_component(&s).unwrap().data.iter().all(|&v| (v - 0.8).abs() < 1e-12));
    assert!(highpass_component(&s).unwrap().data.iter().all(|&v| v.abs() < 1e-12));

    let board: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
    let s = dwt2(&Tensor::from_vec(1, 1, 4, 4, board.clone()).unwrap()).unwrap();
    let low = lowpass_component(&s).unwrap();
    let high = highpass_component(&s).unwrap();
    for i in 0..16 {
        assert_close(low.data[i], 0.5, 1e-12, "low");
        assert_close(high.data[i], board[i] - 0.5, 1e-12, "high");
    }
}

#[test]
fn errors() {
    assert!(matches!(dwt2(&Tensor::zeros(1, 1, 3, 4)), Err(Error::Dimension(_))));
    assert!(matches!(dwt2(&Tensor::filled(1, 1, 2, 2, f64::NAN)), Err(Error::Validation(_))));
}

#[test]
fn reconstruction_additivity_linearity_and_channels() {
    let mut r = rng(30);
    for _ in 0..20 {
        let (c, h, w) = (r.random_range(1..9), 2 * r.random_range(1..33), 2 * r.random_range(1..33));
        let x = random_map(&mut r, c, h, w);
        let s = dwt2(&x).unwrap();
        assert!(idwt2(&s).unwrap().max_abs_diff(&x) < 1e-6);
        let sum = lowpass_component(&s).unwrap().add(&highpass_component(&s).unwrap()).unwrap();
        assert!(sum.max_abs_diff(&idwt2(&s).unwrap()) < 1e-6);

        let y = random_map(&mut r, c, h, w);
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let lhs = dwt2(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
        let sy = dwt2(&y).unwrap();
        assert!(lhs.ll.max_abs_diff(&s.ll.scale(a).add(&sy.ll.scale(b)).unwrap()) < 1e-6);
        assert!(lhs.hh.max_abs_diff(&s.hh.scale(a).add(&sy.hh.scale(b)).unwrap()) < 1e-6);

        let joint = dwt2(&Tensor::concat_channels(&[&x, &y]).unwrap()).unwrap();
        let want = Tensor::concat_channels(&[&s.lh, &sy.lh]).unwrap();
        assert_eq!(joint.lh, want);
    }
}

#[test]
fn pad_fallback_round_trips() {
    let mut r = rng(31);
    let x = random_map(&mut r, 2, 5, 7);
    let p = pad_to_even(&x);
    assert_eq!(p.shape(), [1, 2, 6, 8]);
    let back = crop_to(&idwt2(&dwt2(&p).unwrap()).unwrap(), 5, 7);
    assert!(back.max_abs_diff(&x) < 1e-12);
}
