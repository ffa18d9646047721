use crate::error::Result;
use crate::image::Image;

use super::common::{mean, Levels};

pub(crate) fn histogram(l: &Levels) -> [f64; 256] {
    let mut hist = [0.0; 256];
    for b in l.bins() {
        hist[b] += 1.0;
    }
    hist
}

pub(crate) fn entropy_of(l: &Levels) -> f64 {
    let n = l.data.len() as f64;
    histogram(l)
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-level histogram.
pub fn entropy(f: &Image) -> Result<f64> {
    Ok(entropy_of(&Levels::of(f)?))
}

/// Population standard deviation of the 8-bit levels.
pub fn std_dev(f: &Image) -> Result<f64> {
    let l = Levels::of(f)?;
    let m = mean(&l.data);
    let var = l.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / l.data.len() as f64;
    Ok(var.sqrt())
}

/// `sqrt(RF² + CF²)` with both differences normalized by the pixel count.
pub fn spatial_frequency(f: &Image) -> Result<f64> {
    let l = Levels::of(f)?;
    let (h, w) = (l.h, l.w);
    let mut rf = 0.0;
    let mut cf = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = l.data[y * w + x];
            if x > 0 {
                let d = v - l.data[y * w + x - 1];
                rf += d * d;
            }
            if y > 0 {
                let d = v - l.data[(y - 1) * w + x];
                cf += d * d;
            }
        }
    }
    let n = (h * w) as f64;
    Ok((rf / n + cf / n).sqrt())
}
