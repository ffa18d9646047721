//! BT.601 full-range colour conversion and the colour fusion path.
//!
//! `Y = 0.299 R + 0.587 G + 0.114 B`, `U = 0.5 (B − Y) / (1 − 0.114)`,
//! `V = 0.5 (R − Y) / (1 − 0.299)`. U and V are centred on zero and lie in
//! `[−0.5, 0.5]`. The inverse is the exact algebraic inverse followed by a
//! clip to `[0, 1]`.

use crate::error::Result;
use crate::image::{ColorImage, Image};
use crate::network::ModelState;

use super::inference::fuse_images;

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

/// Luminance and centred chrominance planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Yuv {
    pub y: Image,
    pub u: Image,
    pub v: Image,
}

pub fn rgb_to_yuv(c: &ColorImage) -> Result<Yuv> {
    c.validate()?;
    let n = c.r.len();
    let (mut y, mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (r, g, b) = (c.r[i], c.g[i], c.b[i]);
        let yy = KR * r + KG * g + KB * b;
        y.push(yy.clamp(0.0, 1.0));
        u.push(0.5 * (b - yy) / (1.0 - KB));
        v.push(0.5 * (r - yy) / (1.0 - KR));
    }
    Ok(Yuv {
        y: Image::new(c.height, c.width, y)?,
        u: Image::new(c.height, c.width, u)?,
        v: Image::new(c.height, c.width, v)?,
    })
}

pub fn yuv_to_rgb(yuv: &Yuv) -> Result<ColorImage> {
    let Yuv { y, u, v } = yuv;
    y.ensure_same_shape(u, "Y vs U")?;
    y.ensure_same_shape(v, "Y vs V")?;
    let n = y.len();
    let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (yy, uu, vv) = (y.data[i], u.data[i], v.data[i]);
        let rr = yy + vv * 2.0 * (1.0 - KR);
        let bb = yy + uu * 2.0 * (1.0 - KB);
        let gg = (yy - KR * rr - KB * bb) / KG;
        r.push(rr.clamp(0.0, 1.0));
        g.push(gg.clamp(0.0, 1.0));
        b.push(bb.clamp(0.0, 1.0));
    }
    Ok(ColorImage {
        height: y.height,
        width: y.width,
        r,
        g,
        b,
    })
}

/// Colour fusion with its intermediate YUV planes exposed.
#[derive(Debug, Clone)]
pub struct ColorFusion {
    pub fused_y: Image,
    /// Chrominance of the functional input, passed through untouched.
    pub u: Image,
    pub v: Image,
    pub rgb: ColorImage,
    pub runtime_seconds: f64,
}

/// Fuse the MR image with the luminance of a functional colour image and
/// recombine with the original chrominance.
pub fn fuse_color_yuv(m: &ModelState, mr: &Image, func: &ColorImage) -> Result<ColorFusion> {
    let Yuv { y, u, v } = rgb_to_yuv(func)?;
    let fused = fuse_images(m, mr, &y)?;
    let out = Yuv {
        y: fused.image,
        u,
        v,
    };
    let rgb = yuv_to_rgb(&out)?;
    Ok(ColorFusion {
        fused_y: out.y,
        u: out.u,
        v: out.v,
        rgb,
        runtime_seconds: fused.runtime_seconds,
    })
}

pub fn fuse_color(m: &ModelState, mr: &Image, func: &ColorImage) -> Result<ColorImage> {
    Ok(fuse_color_yuv(m, mr, func)?.rgb)
}
