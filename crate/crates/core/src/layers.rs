//! Network layers with hand-written backward passes.
//!
//! Every layer works on NCHW [`Tensor`]s in `f64`. Backward methods take the
//! forward input (or a cache) plus the upstream gradient, accumulate into the
//! layer's [`Param::grad`] buffers and return the gradient for the input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.value.len() == other.value.len()
            && self
                .value
                .iter()
                .zip(&other.value)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut p = Param::zeros(shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut p = Param::zeros(shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        } else {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }
}

/// `C = A·B + beta·C` for row/column-strided operands; C is dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    gemm_rsc(m, k, n, a, rsa, csa, b, rsb, csb, beta, c, n)
}

/// As [`gemm`], with row stride `rsc ≥ n` for C.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rsc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb || k == 0);
    assert!(rsc >= n && c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserts above bound every index the kernel touches and C
    // does not alias A or B.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Column-buffer budget (in values) for one band of the convolution.
const IM2COL_BAND_VALUES: usize = 1 << 16;
/// Lower bound on GEMM width per band, so deep layers keep efficient shapes.
const MIN_BAND_COLUMNS: usize = 512;

/// Square-kernel, stride-1 convolution with zero padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: Param::fan_in_uniform(
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(&[out_channels]),
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::dim(format!(
                "{h}x{w} input too small for a {0}x{0} kernel",
                self.kernel
            )));
        }
        Ok((hp - self.kernel + 1, wp - self.kernel + 1))
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        self.im2col_rows(x, h, w, 0..oh, ow, cols, |v| v);
    }

    /// im2col restricted to output rows `rows`; `cols` is `kk × (rows·ow)`.
    fn im2col_rows<T: Copy + Default>(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        rows: std::ops::Range<usize>,
        ow: usize,
        cols: &mut [T],
        cvt: impl Fn(f64) -> T,
    ) {
        let k = self.kernel;
        let p = self.padding as isize;
        let on = rows.len() * ow;
        let first = rows.start;
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let row = &mut cols[((ci * k + u) * k + v) * on..((ci * k + u) * k + v + 1) * on];
                    for oy in rows.clone() {
                        let iy = oy as isize + u as isize - p;
                        let dst = &mut row[(oy - first) * ow..(oy - first + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|d| *d = T::default());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        // output columns whose input column lies inside the image
                        let shift = v as isize - p;
                        let lo = (-shift).clamp(0, ow as isize) as usize;
                        let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
                        dst[..lo].iter_mut().for_each(|d| *d = T::default());
                        dst[hi..].iter_mut().for_each(|d| *d = T::default());
                        let s0 = (lo as isize + shift) as usize;
                        for (d, &v) in dst[lo..hi].iter_mut().zip(&src[s0..s0 + (hi - lo)]) {
                            *d = cvt(v);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let p = self.padding as isize;
        let on = oh * ow;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let row = &cols[((ci * k + u) * k + v) * on..((ci * k + u) * k + v + 1) * on];
                    for oy in 0..oh {
                        let iy = oy as isize + u as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, s) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = ox as isize + v as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.padding == 0
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} channels, got {}",
                self.in_channels, x.c
            )));
        }
        let (oh, ow) = self.out_dims(x.h, x.w)?;
        let kk = self.in_channels * self.kernel * self.kernel;
        let on = oh * ow;
        let mut y = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let band = (IM2COL_BAND_VALUES / (kk * ow)).max(MIN_BAND_COLUMNS.div_ceil(ow)).clamp(1, oh);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; kk * band * ow]
        };
        for s in 0..x.n {
            let out = y.sample_mut(s);
            for (o, chunk) in out.chunks_mut(on).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            if self.is_pointwise() {
                gemm(self.out_channels, kk, on, &self.weight.value, kk, 1, x.sample(s), on, 1, 1.0, out);
                continue;
            }
            for r0 in (0..oh).step_by(band) {
                let rows = r0..(r0 + band).min(oh);
                let n = rows.len() * ow;
                self.im2col_rows(x.sample(s), x.h, x.w, rows, ow, &mut cols[..kk * n], |v| v);
                gemm_rsc(
                    self.out_channels,
                    kk,
                    n,
                    &self.weight.value,
                    kk,
                    1,
                    &cols[..kk * n],
                    n,
                    1,
                    1.0,
                    &mut out[r0 * ow..],
                    on,
                );
            }
        }
        Ok(y)
    }

    /// Inference variant of [`Conv2d::forward`] whose spatial GEMMs run in
    /// single precision; inputs, outputs, bias and accumulation into the
    /// output stay `f64`. Pointwise convolutions use the exact path.
    pub fn forward_mixed(&self, x: &Tensor) -> Result<Tensor> {
        if self.is_pointwise() {
            return self.forward(x);
        }
        if x.c != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} channels, got {}",
                self.in_channels, x.c
            )));
        }
        let (oh, ow) = self.out_dims(x.h, x.w)?;
        let kk = self.in_channels * self.kernel * self.kernel;
        let on = oh * ow;
        let cout = self.out_channels;
        let weight: Vec<f32> = self.weight.value.iter().map(|&v| v as f32).collect();
        let mut y = Tensor::zeros(x.n, cout, oh, ow);
        let band = (IM2COL_BAND_VALUES / (kk * ow)).max(MIN_BAND_COLUMNS.div_ceil(ow)).clamp(1, oh);
        let mut cols = vec![0.0f32; kk * band * ow];
        let mut acc = vec![0.0f32; cout * band * ow];
        for s in 0..x.n {
            let out = y.sample_mut(s);
            for r0 in (0..oh).step_by(band) {
                let rows = r0..(r0 + band).min(oh);
                let n = rows.len() * ow;
                self.im2col_rows(x.sample(s), x.h, x.w, rows, ow, &mut cols[..kk * n], |v| v as f32);
                // SAFETY: `weight` is cout×kk, `cols` holds kk×n values and
                // `acc` cout×n, all dense row-major and disjoint.
                unsafe {
                    matrixmultiply::sgemm(
                        cout,
                        kk,
                        n,
                        1.0,
                        weight.as_ptr(),
                        kk as isize,
                        1,
                        cols.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        acc.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                for o in 0..cout {
                    let b = self.bias.value[o];
                    let dst = &mut out[o * on + r0 * ow..o * on + r0 * ow + n];
                    for (d, &a) in dst.iter_mut().zip(&acc[o * n..(o + 1) * n]) {
                        *d = b + a as f64;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (oh, ow) = (dy.h, dy.w);
        let kk = self.in_channels * self.kernel * self.kernel;
        let on = oh * ow;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut cols = vec![0.0; if self.is_pointwise() { 0 } else { kk * on }];
        let mut dcols = vec![0.0; if self.is_pointwise() { 0 } else { kk * on }];
        let cout = self.out_channels;
        for s in 0..x.n {
            let g = dy.sample(s);
            {
                let db = self.bias.grad_mut();
                for (o, chunk) in g.chunks(on).enumerate() {
                    db[o] += chunk.iter().sum::<f64>();
                }
            }
            let input: &[f64] = if self.is_pointwise() {
                x.sample(s)
            } else {
                self.im2col(x.sample(s), x.h, x.w, oh, ow, &mut cols);
                &cols
            };
            // dW[cout, kk] += dY[cout, on] · colsᵀ[on, kk]
            {
                let dw = self.weight.grad_mut();
                gemm(cout, on, kk, g, on, 1, input, 1, on, 1.0, dw);
            }
            // dcols[kk, on] = Wᵀ[kk, cout] · dY[cout, on]
            if self.is_pointwise() {
                gemm(kk, cout, on, &self.weight.value, 1, kk, g, on, 1, 0.0, dx.sample_mut(s));
            } else {
                gemm(kk, cout, on, &self.weight.value, 1, kk, g, on, 1, 0.0, &mut dcols);
                self.col2im(&dcols, x.h, x.w, oh, ow, dx.sample_mut(s));
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Per-channel batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved normalized activations for the training-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c != self.channels {
            return Err(Error::dim(format!(
                "batch norm expects {} channels, got {}",
                self.channels, x.c
            )));
        }
        Ok(())
    }

    /// Normalize with batch statistics and update the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BnCache)> {
        self.check(x)?;
        let m = (x.n * x.plane_len()) as f64;
        let mut y = x.clone();
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mut sum = 0.0;
            for s in 0..x.n {
                sum += x.plane(s, c).iter().sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0;
            for s in 0..x.n {
                sq += x.plane(s, c).iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            let var = sq / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for s in 0..x.n {
                let xh = xhat.plane_mut(s, c);
                xh.iter_mut().for_each(|v| *v = (*v - mean) * istd);
                let yp = y.plane_mut(s, c);
                for (yv, xv) in yp.iter_mut().zip(xhat.plane(s, c)) {
                    *yv = g * xv + b;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        Ok((y, BnCache { xhat, inv_std }))
    }

    /// Normalize with the running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        self.eval_in_place(&mut y, false)?;
        Ok(y)
    }

    /// Inference-mode normalization applied in place, optionally followed
    /// by a ReLU.
    pub fn eval_in_place(&self, y: &mut Tensor, then_relu: bool) -> Result<()> {
        self.check(y)?;
        for c in 0..y.c {
            let istd = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            for s in 0..y.n {
                let plane = y.plane_mut(s, c);
                if then_relu {
                    plane.iter_mut().for_each(|v| *v = (*v * scale + shift).max(0.0));
                } else {
                    plane.iter_mut().for_each(|v| *v = *v * scale + shift);
                }
            }
        }
        Ok(())
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor) -> Tensor {
        let m = (dy.n * dy.plane_len()) as f64;
        let mut dx = dy.clone();
        for c in 0..dy.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..dy.n {
                for (g, xh) in dy.plane(s, c).iter().zip(cache.xhat.plane(s, c)) {
                    sum_dy += g;
                    sum_dy_xhat += g * xh;
                }
            }
            self.gamma.grad_mut()[c] += sum_dy_xhat;
            self.beta.grad_mut()[c] += sum_dy;
            let k = self.gamma.value[c] * cache.inv_std[c] / m;
            for s in 0..dy.n {
                let xh = cache.xhat.plane(s, c);
                for (i, d) in dx.plane_mut(s, c).iter_mut().enumerate() {
                    *d = k * (m * *d - sum_dy - xh[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

/// 2×2, stride-2, padding-0 transposed convolution (exact 2× upsampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2x2 {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Layout `[in, out, 2, 2]`.
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2x2 {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2x2 {
            in_channels,
            out_channels,
            weight: Param::fan_in_uniform(&[in_channels, out_channels, 2, 2], out_channels * 4, rng),
            bias: Param::zeros(&[out_channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c != self.in_channels {
            return Err(Error::dim(format!(
                "transpose conv expects {} channels, got {}",
                self.in_channels, x.c
            )));
        }
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let co4 = self.out_channels * 4;
        let mut y = Tensor::zeros(x.n, self.out_channels, 2 * h, 2 * w);
        let mut tmp = vec![0.0; co4 * hw];
        for s in 0..x.n {
            // tmp[co4, hw] = Wᵀ[co4, cin] · X[cin, hw]
            gemm(co4, self.in_channels, hw, &self.weight.value, 1, co4, x.sample(s), hw, 1, 0.0, &mut tmp);
            let out = y.sample_mut(s);
            for o in 0..self.out_channels {
                let b = self.bias.value[o];
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let src = &tmp[(o * 4 + d) * hw..(o * 4 + d + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            out[o * 4 * hw + (2 * i + di) * 2 * w + 2 * j + dj] = src[i * w + j] + b;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let co4 = self.out_channels * 4;
        let mut dx = Tensor::zeros(x.n, x.c, h, w);
        let mut tmp = vec![0.0; co4 * hw];
        for s in 0..x.n {
            let g = dy.sample(s);
            for o in 0..self.out_channels {
                let mut bsum = 0.0;
                for d in 0..4 {
                    let (di, dj) = (d / 2, d % 2);
                    let dst = &mut tmp[(o * 4 + d) * hw..(o * 4 + d + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            let v = g[o * 4 * hw + (2 * i + di) * 2 * w + 2 * j + dj];
                            dst[i * w + j] = v;
                            bsum += v;
                        }
                    }
                }
                self.bias.grad_mut()[o] += bsum;
            }
            // dW[cin, co4] += X[cin, hw] · tmpᵀ[hw, co4]
            gemm(self.in_channels, hw, co4, x.sample(s), hw, 1, &tmp, 1, hw, 1.0, self.weight.grad_mut());
            // dX[cin, hw] = W[cin, co4] · tmp[co4, hw]
            gemm(self.in_channels, co4, hw, &self.weight.value, co4, 1, &tmp, hw, 1, 0.0, dx.sample_mut(s));
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given its output.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, o) in dx.data.iter_mut().zip(&out.data) {
        if *o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn ensure_poolable(x: &Tensor) -> Result<()> {
    if x.h % 2 != 0 || x.w % 2 != 0 || x.h == 0 || x.w == 0 {
        return Err(Error::dim(format!(
            "2x2 pooling needs even spatial dims, got {}x{}",
            x.h, x.w
        )));
    }
    Ok(())
}

/// 2×2 stride-2 max pooling; also returns the flat input index of each winner.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    ensure_poolable(x)?;
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0usize; y.len()];
    let plane = x.plane_len();
    for p in 0..x.num_planes() {
        for i in 0..oh {
            for j in 0..ow {
                let base = p * plane;
                let cands = [
                    base + 2 * i * x.w + 2 * j,
                    base + 2 * i * x.w + 2 * j + 1,
                    base + (2 * i + 1) * x.w + 2 * j,
                    base + (2 * i + 1) * x.w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if x.data[c] > x.data[best] {
                        best = c;
                    }
                }
                let k = p * oh * ow + i * ow + j;
                y.data[k] = x.data[best];
                arg[k] = best;
            }
        }
    }
    Ok((y, arg))
}

pub fn max_pool2_backward(input_shape: [usize; 4], arg: &[usize], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (k, &src) in arg.iter().enumerate() {
        dx.data[src] += dy.data[k];
    }
    dx
}

/// 2×2 stride-2 average pooling.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    ensure_poolable(x)?;
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    for p in 0..x.num_planes() {
        let (d, hh, ww) = crate::filters::downsample2(
            &x.data[p * x.plane_len()..(p + 1) * x.plane_len()],
            x.h,
            x.w,
        );
        debug_assert_eq!((hh, ww), (oh, ow));
        y.data[p * oh * ow..(p + 1) * oh * ow].copy_from_slice(&d);
    }
    Ok(y)
}

pub fn avg_pool2_backward(input_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    let plane = h * w;
    for p in 0..n * c {
        let g = &dy.data[p * dy.plane_len()..(p + 1) * dy.plane_len()];
        let up = crate::filters::downsample2_adjoint(g, h, w);
        dx.data[p * plane..(p + 1) * plane].copy_from_slice(&up);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, s: [usize; 4]) -> Tensor {
        let data = (0..s.iter().product()).map(|_| rng.random::<f64>() - 0.5).collect();
        Tensor::from_vec(s[0], s[1], s[2], s[3], data).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    /// Direct nested-loop convolution used as an oracle.
    fn conv_direct(c: &Conv2d, x: &Tensor) -> Tensor {
        let k = c.kernel as isize;
        let p = c.padding as isize;
        let oh = x.h + 2 * c.padding + 1 - c.kernel;
        let ow = x.w + 2 * c.padding + 1 - c.kernel;
        let mut y = Tensor::zeros(x.n, c.out_channels, oh, ow);
        for s in 0..x.n {
            for o in 0..c.out_channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = c.bias.value[o];
                        for ci in 0..c.in_channels {
                            for u in 0..k {
                                for v in 0..k {
                                    let (iy, ix) = (i as isize + u - p, j as isize + v - p);
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        let wi = ((o * c.in_channels + ci) * c.kernel + u as usize) * c.kernel + v as usize;
                                        acc += c.weight.value[wi] * x.at(s, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let id = y.idx(s, o, i, j);
                        y.data[id] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, p) in [(3, 1), (1, 0)] {
            let mut conv = Conv2d::new(3, 4, k, p, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = rand_tensor(&mut rng, [2, 3, 5, 6]);
            let y = conv.forward(&x).unwrap();
            assert!(y.max_abs_diff(&conv_direct(&conv, &x)) < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint_and_weight_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 3, 1, &mut rng);
        let x = rand_tensor(&mut rng, [2, 2, 4, 5]);
        let g = rand_tensor(&mut rng, [2, 3, 4, 5]);
        conv.bias.value.iter_mut().for_each(|b| *b = 0.0);
        let y = conv.forward(&x).unwrap();
        let dx = conv.backward(&x, &g);
        assert!((dot(&y, &g) - dot(&x, &dx)).abs() < 1e-10);
        // d<y,g>/dW is linear in W, so a finite difference is exact up to rounding
        let i = 7;
        let mut c2 = conv.clone();
        c2.weight.value[i] += 1e-3;
        let fd = (dot(&c2.forward(&x).unwrap(), &g) - dot(&y, &g)) / 1e-3;
        assert!((fd - conv.weight.grad[i]).abs() < 1e-8);
        let bsum: f64 = (0..2).map(|s| g.plane(s, 1).iter().sum::<f64>()).sum();
        assert!((conv.bias.grad[1] - bsum).abs() < 1e-12);
    }

    #[test]
    fn transpose_conv_scatter_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tc = ConvTranspose2x2::new(3, 2, &mut rng);
        let x = rand_tensor(&mut rng, [2, 3, 3, 4]);
        let y = tc.forward(&x).unwrap();
        assert_eq!(y.shape(), [2, 2, 6, 8]);
        // direct formula for one output element
        let (s, o, i, j, di, dj) = (1, 1, 2, 3, 1, 0);
        let mut expect = 0.0;
        for c in 0..3 {
            expect += tc.weight.value[((c * 2 + o) * 2 + di) * 2 + dj] * x.at(s, c, i, j);
        }
        assert!((y.at(s, o, 2 * i + di, 2 * j + dj) - expect).abs() < 1e-12);
        let g = rand_tensor(&mut rng, [2, 2, 6, 8]);
        let dx = tc.backward(&x, &g);
        assert!((dot(&y, &g) - dot(&x, &dx)).abs() < 1e-10);
    }

    #[test]
    fn batchnorm_train_normalizes_and_eval_uses_running() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::new(2);
        let x = rand_tensor(&mut rng, [3, 2, 4, 4]).map(|v| 3.0 * v + 1.0);
        let (y, _) = bn.forward_train(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.plane(s, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_var.iter().all(|&v| v > 0.0));
        assert!(bn.running_mean.iter().all(|&m| m != 0.0));
        let fresh = BatchNorm2d::new(2);
        let ye = fresh.forward_eval(&x).unwrap();
        assert!(ye.max_abs_diff(&x.scale(1.0 / (1.0f64 + 1e-5).sqrt())) < 1e-12);
    }

    #[test]
    fn batchnorm_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.4];
        let x = rand_tensor(&mut rng, [2, 2, 3, 3]);
        let g = rand_tensor(&mut rng, [2, 2, 3, 3]);
        let (y, cache) = bn.forward_train(&x).unwrap();
        let _ = y;
        let dx = bn.backward(&cache, &g);
        let h = 1e-5;
        for i in [0, 5, 13, 30] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let mut b2 = bn.clone();
            let fp = dot(&b2.forward_train(&xp).unwrap().0, &g);
            let fm = dot(&b2.forward_train(&xm).unwrap().0, &g);
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7, "{fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn pools() {
        let x = Tensor::from_vec(1, 1, 2, 4, vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 9.0, 0.0]).unwrap();
        let (m, arg) = max_pool2(&x).unwrap();
        assert_eq!(m.data, vec![5.0, 9.0]);
        let dy = Tensor::from_vec(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let dx = max_pool2_backward(x.shape(), &arg, &dy);
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let a = avg_pool2(&x).unwrap();
        assert_eq!(a.data, vec![3.25, 3.25]);
        let da = avg_pool2_backward(x.shape(), &dy);
        assert_eq!(da.data[0], 0.25);
        assert_eq!(da.data[7], 0.5);
        assert!(max_pool2(&Tensor::zeros(1, 1, 3, 2)).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
