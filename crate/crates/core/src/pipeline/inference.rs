use std::time::Instant;

use crate::error::Result;
use crate::image::Image;
use crate::network::ModelState;
use crate::tensor::Tensor;

use super::data::ImagePair;

/// A fused image and the wall-clock time of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub image: Image,
    pub runtime_seconds: f64,
}

/// Stack `a` (MR) and `b` into a `1 × 2 × H × W` network input.
pub(crate) fn stack_sources(a: &Image, b: &Image) -> Result<Tensor> {
    a.ensure_same_shape(b, "source images")?;
    let mut data = Vec::with_capacity(2 * a.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(1, 2, a.height, a.width, data)
}

pub(crate) fn fuse_images(m: &ModelState, a: &Image, b: &Image) -> Result<Fused> {
    a.validate()?;
    b.validate()?;
    let x = stack_sources(a, b)?;
    let start = Instant::now();
    let y = m.infer(&x)?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    Ok(Fused {
        image: Image::new(y.h, y.w, y.data)?,
        runtime_seconds,
    })
}

/// One inference-mode forward pass over a source pair (see
/// [`ModelState::infer`]).
pub fn fuse_pair(m: &ModelState, pair: &ImagePair) -> Result<Fused> {
    let fused = fuse_images(m, &pair.source_a, &pair.source_b)?;
    log::debug!(
        "fused `{}` ({}x{}) in {:.4} s",
        pair.pair_id,
        fused.image.height,
        fused.image.width,
        fused.runtime_seconds
    );
    Ok(fused)
}
