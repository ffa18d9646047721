//! Small spatial filters shared by the losses and the metrics.

use crate::image::Image;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Index into `[0, n)` with symmetric (edge-repeating) reflection for one
/// step past either border.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i - 1) as usize
    } else if i as usize >= n {
        2 * n - 1 - i as usize
    } else {
        i as usize
    }
}

fn correlate3(img: &Image, k: &[[f64; 3]; 3]) -> Image {
    let (h, w) = (img.height, img.width);
    let mut out = Image::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (u, row) in k.iter().enumerate() {
                let sy = reflect(y as isize + u as isize - 1, h);
                for (v, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        let sx = reflect(x as isize + v as isize - 1, w);
                        acc += kv * img.data[sy * w + sx];
                    }
                }
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

fn correlate3_adjoint(g: &Image, k: &[[f64; 3]; 3]) -> Image {
    let (h, w) = (g.height, g.width);
    let mut out = Image::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let gv = g.data[y * w + x];
            for (u, row) in k.iter().enumerate() {
                let sy = reflect(y as isize + u as isize - 1, h);
                for (v, &kv) in row.iter().enumerate() {
                    if kv != 0.0 {
                        let sx = reflect(x as isize + v as isize - 1, w);
                        out.data[sy * w + sx] += kv * gv;
                    }
                }
            }
        }
    }
    out
}

/// Horizontal and vertical Sobel responses with symmetric border padding.
pub fn sobel(img: &Image) -> (Image, Image) {
    (correlate3(img, &SOBEL_X), correlate3(img, &SOBEL_Y))
}

/// Transpose of [`sobel`]: maps response-space gradients back to pixels.
pub fn sobel_adjoint(gx: &Image, gy: &Image) -> Image {
    let mut a = correlate3_adjoint(gx, &SOBEL_X);
    let b = correlate3_adjoint(gy, &SOBEL_Y);
    for (p, q) in a.data.iter_mut().zip(&b.data) {
        *p += q;
    }
    a
}

/// Normalized 1D Gaussian of odd length `size`.
pub fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable 'valid' correlation of a `h × w` plane with `k ⊗ k`.
pub fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let m = k.len();
    if h < m || w < m {
        return (Vec::new(), 0, 0);
    }
    let (oh, ow) = (h - m + 1, w - m + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + m]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (t, &kv) in k.iter().enumerate() {
            let src_row = &tmp[(y + t) * ow..(y + t + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    (out, oh, ow)
}

/// Transpose of [`filter_valid`]: scatters an `oh × ow` map back to `h × w`.
pub fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let m = k.len();
    let (oh, ow) = (h + 1 - m, w + 1 - m);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for (t, &kv) in k.iter().enumerate() {
            let src = &g[y * ow..(y + 1) * ow];
            let dst = &mut tmp[(y + t) * ow..(y + t + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (t, &kv) in k.iter().enumerate() {
                out[y * w + x + t] += kv * v;
            }
        }
    }
    out
}

/// 2×2 mean downsampling; odd trailing rows/columns are dropped.
pub fn downsample2(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// Transpose of [`downsample2`].
pub fn downsample2_adjoint(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..oh {
        for x in 0..ow {
            let v = 0.25 * g[y * ow + x];
            out[2 * y * w + 2 * x] += v;
            out[2 * y * w + 2 * x + 1] += v;
            out[(2 * y + 1) * w + 2 * x] += v;
            out[(2 * y + 1) * w + 2 * x + 1] += v;
        }
    }
    out
}
