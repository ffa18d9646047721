use crate::error::{Error, Result};
use crate::image::{to_level, Image};

/// An image quantized to 8-bit levels, kept as `f64` for arithmetic.
pub(crate) struct Levels {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Levels {
    pub fn of(img: &Image) -> Result<Self> {
        if img.is_empty() {
            return Err(Error::invalid("metric input is empty"));
        }
        if img.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("metric input contains non-finite values"));
        }
        Ok(Levels {
            h: img.height,
            w: img.width,
            data: img.data.iter().map(|&v| to_level(v) as f64).collect(),
        })
    }

    pub fn bins(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().map(|&v| v as usize)
    }
}

pub(crate) fn triple(f: &Image, a: &Image, b: &Image) -> Result<(Levels, Levels, Levels)> {
    f.ensure_same_shape(a, "fused vs source A")?;
    f.ensure_same_shape(b, "fused vs source B")?;
    Ok((Levels::of(f)?, Levels::of(a)?, Levels::of(b)?))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation; zero when either operand has zero variance.
pub(crate) fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, q) in x.iter().zip(y) {
        let (dx, dy) = (p - mx, q - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    }
}
