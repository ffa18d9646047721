use crate::error::Result;
use crate::image::Image;

use super::common::{pearson, triple, Levels};

/// Mutual information in bits between two equally sized level images.
pub(crate) fn mi_levels(x: &Levels, y: &Levels) -> f64 {
    let mut joint = vec![0.0f64; 256 * 256];
    let mut px = [0.0f64; 256];
    let mut py = [0.0f64; 256];
    for (i, j) in x.bins().zip(y.bins()) {
        joint[i * 256 + j] += 1.0;
        px[i] += 1.0;
        py[j] += 1.0;
    }
    let n = x.data.len() as f64;
    let mut mi = 0.0;
    for i in 0..256 {
        if px[i] == 0.0 {
            continue;
        }
        for j in 0..256 {
            let c = joint[i * 256 + j];
            if c > 0.0 {
                mi += (c / n) * (c * n / (px[i] * py[j])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information in bits between two images.
pub fn mutual_information(x: &Image, y: &Image) -> Result<f64> {
    x.ensure_same_shape(y, "mutual information operands")?;
    Ok(mi_levels(&Levels::of(x)?, &Levels::of(y)?))
}

/// `MI(A, F) + MI(B, F)`.
pub fn mutual_information_metric(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    Ok(mi_levels(&a, &f) + mi_levels(&b, &f))
}

/// Sum of correlations of differences, `r(f − b, a) + r(f − a, b)`.
pub fn scd(f: &Image, a: &Image, b: &Image) -> Result<f64> {
    let (f, a, b) = triple(f, a, b)?;
    let fb: Vec<f64> = f.data.iter().zip(&b.data).map(|(p, q)| p - q).collect();
    let fa: Vec<f64> = f.data.iter().zip(&a.data).map(|(p, q)| p - q).collect();
    Ok(pearson(&fb, &a.data) + pearson(&fa, &b.data))
}
