//! Single-channel and RGB intensity rasters in `[0, 1]`, plus PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Checks the ingestion invariant: non-empty, finite, inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("empty image"));
        }
        if let Some(v) = self
            .data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!(
                "pixel value {v} outside the [0, 1] intensity range"
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.width, self.height, |y, x| self.get(x, y))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        Image::from_fn(height, width, |y, x| self.get(top + y, left + x))
    }

    /// One-sample, one-channel tensor view of this image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            n: 1,
            c: 1,
            h: self.height,
            w: self.width,
            data: self.data.clone(),
        }
    }

    /// Quantize to 8-bit levels `round(255 · clip(x, 0, 1))`.
    pub fn to_levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_level(v)).collect()
    }
}

#[inline]
pub fn to_level(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// RGB image with channel values in `[0, 1]`, stored as three planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub height: usize,
    pub width: usize,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl ColorImage {
    pub fn from_planes(r: Image, g: Image, b: Image) -> Result<Self> {
        r.ensure_same_shape(&g, "colour planes")?;
        r.ensure_same_shape(&b, "colour planes")?;
        Ok(ColorImage {
            height: r.height,
            width: r.width,
            r: r.data,
            g: g.data,
            b: b.data,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for plane in [&self.r, &self.g, &self.b] {
            if plane.len() != self.height * self.width {
                return Err(Error::dim("colour plane size mismatch"));
            }
            if plane
                .iter()
                .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
            {
                return Err(Error::invalid("colour value outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn plane(&self, k: usize) -> Image {
        let data = match k {
            0 => self.r.clone(),
            1 => self.g.clone(),
            _ => self.b.clone(),
        };
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// True when every pixel has R = G = B.
    pub fn is_achromatic(&self, tol: f64) -> bool {
        (0..self.r.len()).all(|i| {
            (self.r[i] - self.g[i]).abs() <= tol && (self.g[i] - self.b[i]).abs() <= tol
        })
    }
}

/// A decoded raster, either grayscale or colour.
#[derive(Debug, Clone)]
pub enum Raster {
    Gray(Image),
    Color(ColorImage),
}

impl Raster {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Raster::Gray(i) => (i.height, i.width),
            Raster::Color(c) => (c.height, c.width),
        }
    }
}

fn decode_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Load an 8-bit grayscale or 24-bit RGB raster, normalized to `[0, 1]`.
///
/// Gray+alpha and RGBA inputs drop their alpha channel; 16-bit inputs are
/// scaled from their full range.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| decode_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::ColorType::*;
    let raster = match img.color() {
        L8 | La8 | L16 | La16 => {
            let g = img.to_luma16();
            let data = g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Raster::Gray(Image::new(h, w, data)?)
        }
        _ => {
            let rgb = img.to_rgb16();
            let raw = rgb.into_raw();
            let mut planes = [
                Vec::with_capacity(h * w),
                Vec::with_capacity(h * w),
                Vec::with_capacity(h * w),
            ];
            for px in raw.chunks_exact(3) {
                for k in 0..3 {
                    planes[k].push(px[k] as f64 / 65535.0);
                }
            }
            let [r, g, b] = planes;
            Raster::Color(ColorImage {
                height: h,
                width: w,
                r,
                g,
                b,
            })
        }
    };
    Ok(raster)
}

/// Load a raster that must be grayscale.
pub fn load_gray(path: &Path) -> Result<Image> {
    match load_raster(path)? {
        Raster::Gray(i) => Ok(i),
        Raster::Color(_) => Err(Error::format(path, "expected a grayscale image, found colour")),
    }
}

/// Write an 8-bit grayscale PNG.
pub fn save_gray(img: &Image, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_levels())
        .ok_or_else(|| Error::dim("image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}

/// Write a 24-bit RGB PNG.
pub fn save_color(img: &ColorImage, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(img.r.len() * 3);
    for i in 0..img.r.len() {
        raw.push(to_level(img.r[i]));
        raw.push(to_level(img.g[i]));
        raw.push(to_level(img.b[i]));
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::dim("image buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| decode_err(path, e))
}
