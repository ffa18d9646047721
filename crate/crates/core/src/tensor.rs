//! Dense NCHW feature tensors.
//!
//! A [`FeatureMap`] is an `n × c × h × w` block of `f64` stored plane by
//! plane. Single images travel through the network as `n = 1`; training
//! batches use `n > 1`. Spatial operations that act per channel (wavelet
//! analysis, pooling) treat all `n · c` planes uniformly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

/// The network's feature-map type.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::dim(format!(
                "buffer of {} values does not match shape {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f64) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn num_planes(&self) -> usize {
        self.n * self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.plane_len();
        let start = (n * self.c + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.plane_len();
        let start = (n * self.c + c) * len;
        &mut self.data[start..start + len]
    }

    /// All channels of sample `n`, contiguous.
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.c * self.plane_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.c * self.plane_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what} contains non-finite values")))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::dim(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert!(self.same_shape(other), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Concatenate along the channel axis. Batch and spatial sizes must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let (n, h, w) = (first.n, first.h, first.w);
        if parts.iter().any(|t| t.n != n || t.h != h || t.w != w) {
            return Err(Error::dim("channel concat requires equal batch and spatial dims"));
        }
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for s in 0..n {
            for t in parts {
                data.extend_from_slice(t.sample(s));
            }
        }
        Ok(Tensor { n, c, h, w, data })
    }

    /// Split along channels into pieces with the given channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Result<Vec<Tensor>> {
        if counts.iter().sum::<usize>() != self.c {
            return Err(Error::dim(format!(
                "channel split {counts:?} does not cover {} channels",
                self.c
            )));
        }
        let plane = self.plane_len();
        let mut out: Vec<Tensor> = counts
            .iter()
            .map(|&c| Tensor::zeros(self.n, c, self.h, self.w))
            .collect();
        for s in 0..self.n {
            let src = self.sample(s);
            let mut offset = 0;
            for (t, &c) in out.iter_mut().zip(counts) {
                t.sample_mut(s)
                    .copy_from_slice(&src[offset * plane..(offset + c) * plane]);
                offset += c;
            }
        }
        Ok(out)
    }

    /// Stack single-sample tensors into a batch.
    pub fn stack(samples: &[Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::dim("cannot stack an empty batch"))?;
        let (c, h, w) = (first.c, first.h, first.w);
        let mut data = Vec::with_capacity(samples.len() * first.len());
        for t in samples {
            if t.c != c || t.h != h || t.w != w {
                return Err(Error::dim("stacked samples must share shape"));
            }
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (c * h * w).max(1);
        Ok(Tensor { n, c, h, w, data })
    }
}
