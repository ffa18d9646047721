//! Wavelet-decomposition edge-preserving pooling.
//!
//! A `H × W × C` map is split into its Haar lowpass and highpass
//! reconstructions (giving `2C` full-resolution channels), re-weighted per
//! channel by squeeze-and-excitation attention, projected back to `C`
//! channels by a 1×1 convolution with ReLU, and max-pooled 2×2 / stride 2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{max_pool2, max_pool2_backward, relu, relu_backward, sigmoid, Conv2d, Param};
use crate::tensor::{FeatureMap, Tensor};
use crate::wavelet::{ensure_even, highpass_plane, lowpass_plane};

pub const DEFAULT_REDUCTION_RATIO: usize = 8;
pub const MIN_HIDDEN_WIDTH: usize = 4;

/// Squeeze-and-excitation weights over `channels` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqExParams {
    pub channels: usize,
    pub hidden: usize,
    pub reduction_ratio: usize,
    /// `[hidden, channels]`
    pub w1: Param,
    pub b1: Param,
    /// `[channels, hidden]`
    pub w2: Param,
    pub b2: Param,
}

impl SqExParams {
    pub fn new(channels: usize, reduction_ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels == 0 || reduction_ratio == 0 {
            return Err(Error::Config(
                "squeeze-excitation needs channels >= 1 and reduction ratio >= 1".into(),
            ));
        }
        let hidden = (channels / reduction_ratio).max(MIN_HIDDEN_WIDTH);
        Ok(SqExParams {
            channels,
            hidden,
            reduction_ratio,
            w1: Param::fan_in_uniform(&[hidden, channels], channels, rng),
            b1: Param::zeros(&[hidden]),
            w2: Param::fan_in_uniform(&[channels, hidden], hidden, rng),
            b2: Param::zeros(&[channels]),
        })
    }

    fn all_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Parameters of one pooling site operating on `channels` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdeppParams {
    pub channels: usize,
    pub sqex: SqExParams,
    /// 1×1 convolution `2C → C`.
    pub projection: Conv2d,
}

impl WdeppParams {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_reduction(channels, DEFAULT_REDUCTION_RATIO, rng)
    }

    pub fn with_reduction(channels: usize, reduction_ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        let sqex = SqExParams::new(2 * channels, reduction_ratio, rng)?;
        let projection = Conv2d::new(2 * channels, channels, 1, 0, rng);
        Ok(WdeppParams {
            channels,
            sqex,
            projection,
        })
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        let [pw, pb] = self.projection.params_mut();
        vec![
            ("sqex.w1", &mut self.sqex.w1),
            ("sqex.b1", &mut self.sqex.b1),
            ("sqex.w2", &mut self.sqex.w2),
            ("sqex.b2", &mut self.sqex.b2),
            ("proj.weight", pw),
            ("proj.bias", pb),
        ]
    }

    fn validate(&self) -> Result<()> {
        let proj_ok = self
            .projection
            .weight
            .value
            .iter()
            .chain(&self.projection.bias.value)
            .all(|v| v.is_finite());
        if !proj_ok || !self.sqex.all_finite() {
            return Err(Error::invalid("non-finite WDEPP parameter"));
        }
        if self.projection.in_channels != 2 * self.channels
            || self.projection.out_channels != self.channels
            || self.sqex.channels != 2 * self.channels
        {
            return Err(Error::dim("WDEPP parameter shapes inconsistent with channel count"));
        }
        Ok(())
    }
}

/// One attention weight per (sample, channel), each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub batch: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl AttentionWeights {
    pub fn sample(&self, n: usize) -> &[f64] {
        &self.values[n * self.channels..(n + 1) * self.channels]
    }
}

/// `[lowpass(x), highpass(x)]` stacked along channels: `H × W × 2C`.
pub fn build_feature_set(x: &FeatureMap) -> Result<FeatureMap> {
    ensure_even(x)?;
    x.ensure_finite("wavelet input")?;
    let (c, h, w) = (x.c, x.h, x.w);
    let mut f = Tensor::zeros(x.n, 2 * c, h, w);
    for s in 0..x.n {
        for k in 0..c {
            let src = x.plane(s, k);
            lowpass_plane(src, h, w, f.plane_mut(s, k));
            highpass_plane(src, h, w, f.plane_mut(s, c + k));
        }
    }
    Ok(f)
}

/// Transpose of [`build_feature_set`]. Both component maps are orthogonal
/// projections, hence self-adjoint.
fn feature_set_backward(df: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (df.c / 2, df.h, df.w);
    let mut dx = Tensor::zeros(df.n, c, h, w);
    let mut tmp = vec![0.0; h * w];
    for s in 0..df.n {
        for k in 0..c {
            let dst = dx.plane_mut(s, k);
            lowpass_plane(df.plane(s, k), h, w, dst);
            highpass_plane(df.plane(s, c + k), h, w, &mut tmp);
            dst.iter_mut().zip(&tmp).for_each(|(d, t)| *d += t);
        }
    }
    Ok(dx)
}

struct AttentionTrace {
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    weights: AttentionWeights,
}

fn attention_trace(f: &FeatureMap, p: &SqExParams) -> Result<AttentionTrace> {
    if f.c != p.channels {
        return Err(Error::dim(format!(
            "attention expects {} channels, got {}",
            p.channels, f.c
        )));
    }
    f.ensure_finite("attention input")?;
    let (n, c, hd) = (f.n, p.channels, p.hidden);
    let area = f.plane_len() as f64;
    let mut pooled = vec![0.0; n * c];
    for s in 0..n {
        for k in 0..c {
            pooled[s * c + k] = f.plane(s, k).iter().sum::<f64>() / area;
        }
    }
    let mut hidden_pre = vec![0.0; n * hd];
    let mut hidden = vec![0.0; n * hd];
    let mut values = vec![0.0; n * c];
    for s in 0..n {
        let sq = &pooled[s * c..(s + 1) * c];
        for j in 0..hd {
            let row = &p.w1.value[j * c..(j + 1) * c];
            let z = p.b1.value[j] + row.iter().zip(sq).map(|(a, b)| a * b).sum::<f64>();
            hidden_pre[s * hd + j] = z;
            hidden[s * hd + j] = z.max(0.0);
        }
        let r = &hidden[s * hd..(s + 1) * hd];
        for k in 0..c {
            let row = &p.w2.value[k * hd..(k + 1) * hd];
            let e = p.b2.value[k] + row.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
            values[s * c + k] = sigmoid(e);
        }
    }
    Ok(AttentionTrace {
        pooled,
        hidden_pre,
        hidden,
        weights: AttentionWeights {
            batch: n,
            channels: c,
            values,
        },
    })
}

/// Global-average-pool → FC → ReLU → FC → sigmoid, per sample.
pub fn channel_attention(f: &FeatureMap, p: &SqExParams) -> Result<AttentionWeights> {
    Ok(attention_trace(f, p)?.weights)
}

fn scale_channels(f: &Tensor, w: &AttentionWeights) -> Tensor {
    let mut g = f.clone();
    scale_channels_in_place(&mut g, w);
    g
}

fn scale_channels_in_place(f: &mut Tensor, w: &AttentionWeights) {
    for s in 0..f.n {
        for k in 0..f.c {
            let a = w.values[s * w.channels + k];
            f.plane_mut(s, k).iter_mut().for_each(|v| *v *= a);
        }
    }
}

/// Intermediate values kept for the backward pass.
pub struct WdeppCache {
    input_shape: [usize; 4],
    features: Tensor,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    weights: AttentionWeights,
    scaled: Tensor,
    activated: Tensor,
    argmax: Vec<usize>,
}

impl WdeppCache {
    pub fn attention(&self) -> &AttentionWeights {
        &self.weights
    }

    pub(crate) fn activation_pattern(&self) -> impl Iterator<Item = u64> + '_ {
        self.hidden_pre
            .iter()
            .map(|&z| (z > 0.0) as u64)
            .chain(self.activated.data.iter().map(|&v| (v > 0.0) as u64))
            .chain(self.argmax.iter().map(|&i| i as u64))
    }
}

pub fn wdepp_forward(x: &FeatureMap, p: &WdeppParams) -> Result<(FeatureMap, WdeppCache)> {
    p.validate()?;
    if x.c != p.channels {
        return Err(Error::dim(format!(
            "WDEPP site expects {} channels, got {}",
            p.channels, x.c
        )));
    }
    let features = build_feature_set(x)?;
    let trace = attention_trace(&features, &p.sqex)?;
    let scaled = scale_channels(&features, &trace.weights);
    let activated = relu(&p.projection.forward(&scaled)?);
    let (out, argmax) = max_pool2(&activated)?;
    Ok((
        out,
        WdeppCache {
            input_shape: x.shape(),
            features,
            pooled: trace.pooled,
            hidden_pre: trace.hidden_pre,
            hidden: trace.hidden,
            weights: trace.weights,
            scaled,
            activated,
            argmax,
        },
    ))
}

/// The pooled `(H/2) × (W/2) × C` output. Same arithmetic as
/// [`wdepp_forward`] without retaining intermediates.
pub fn wdepp_pool(x: &FeatureMap, p: &WdeppParams) -> Result<FeatureMap> {
    p.validate()?;
    if x.c != p.channels {
        return Err(Error::dim(format!(
            "WDEPP site expects {} channels, got {}",
            p.channels, x.c
        )));
    }
    let mut features = build_feature_set(x)?;
    let weights = attention_trace(&features, &p.sqex)?.weights;
    scale_channels_in_place(&mut features, &weights);
    let mut activated = p.projection.forward(&features)?;
    activated.data.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(max_pool2(&activated)?.0)
}

/// Backpropagate through one WDEPP site, accumulating parameter gradients.
pub fn wdepp_backward(p: &mut WdeppParams, cache: &WdeppCache, dy: &Tensor) -> Result<Tensor> {
    let d_act = max_pool2_backward(cache.activated.shape(), &cache.argmax, dy);
    let d_proj = relu_backward(&cache.activated, &d_act);
    let d_scaled = p.projection.backward(&cache.scaled, &d_proj);

    let f = &cache.features;
    let (n, c, hd) = (f.n, p.sqex.channels, p.sqex.hidden);
    let area = f.plane_len() as f64;
    let mut d_feat = d_scaled.clone();
    let mut d_pooled = vec![0.0; n * c];
    for s in 0..n {
        let mut d_e = vec![0.0; c];
        for k in 0..c {
            let a = cache.weights.values[s * c + k];
            let ds = d_scaled.plane(s, k);
            let da: f64 = ds.iter().zip(f.plane(s, k)).map(|(g, v)| g * v).sum();
            d_e[k] = da * a * (1.0 - a);
            d_feat.plane_mut(s, k).iter_mut().for_each(|v| *v *= a);
        }
        let r = &cache.hidden[s * hd..(s + 1) * hd];
        let mut d_r = vec![0.0; hd];
        {
            let gw2 = p.sqex.w2.grad_mut();
            for k in 0..c {
                for j in 0..hd {
                    gw2[k * hd + j] += d_e[k] * r[j];
                }
            }
        }
        {
            let gb2 = p.sqex.b2.grad_mut();
            for k in 0..c {
                gb2[k] += d_e[k];
            }
        }
        for k in 0..c {
            for j in 0..hd {
                d_r[j] += p.sqex.w2.value[k * hd + j] * d_e[k];
            }
        }
        let d_z: Vec<f64> = d_r
            .iter()
            .zip(&cache.hidden_pre[s * hd..(s + 1) * hd])
            .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
            .collect();
        let sq = &cache.pooled[s * c..(s + 1) * c];
        {
            let gw1 = p.sqex.w1.grad_mut();
            for j in 0..hd {
                for k in 0..c {
                    gw1[j * c + k] += d_z[j] * sq[k];
                }
            }
        }
        {
            let gb1 = p.sqex.b1.grad_mut();
            for j in 0..hd {
                gb1[j] += d_z[j];
            }
        }
        for j in 0..hd {
            for k in 0..c {
                d_pooled[s * c + k] += p.sqex.w1.value[j * c + k] * d_z[j];
            }
        }
    }
    for s in 0..n {
        for k in 0..c {
            let g = d_pooled[s * c + k] / area;
            d_feat.plane_mut(s, k).iter_mut().for_each(|v| *v += g);
        }
    }
    let dx = feature_set_backward(&d_feat)?;
    debug_assert_eq!(dx.shape(), cache.input_shape);
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(n: usize) -> Tensor {
        let data = (0..n * n).map(|k| ((k / n + k % n) % 2) as f64).collect();
        Tensor::from_vec(1, 1, n, n, data).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, s: [usize; 4]) -> Tensor {
        let data = (0..s.iter().product()).map(|_| rng.random::<f64>()).collect();
        Tensor::from_vec(s[0], s[1], s[2], s[3], data).unwrap()
    }

    #[test]
    fn feature_set_of_constant() {
        let x = Tensor::filled(1, 3, 4, 6, 0.4);
        let f = build_feature_set(&x).unwrap();
        assert_eq!(f.shape(), [1, 6, 4, 6]);
        for k in 0..3 {
            assert!(f.plane(0, k).iter().all(|v| (v - 0.4).abs() < 1e-12));
            assert!(f.plane(0, k + 3).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn feature_set_halves_sum_to_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, [2, 3, 6, 8]);
        let f = build_feature_set(&x).unwrap();
        let parts = f.split_channels(&[3, 3]).unwrap();
        assert!(parts[0].add(&parts[1]).unwrap().max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn feature_set_of_checkerboard() {
        let x = checkerboard(8);
        let f = build_feature_set(&x).unwrap();
        for (i, v) in x.data.iter().enumerate() {
            assert!((f.plane(0, 0)[i] - 0.5).abs() < 1e-12);
            assert!((f.plane(0, 1)[i] - (v - 0.5)).abs() < 1e-12);
        }
        assert!(build_feature_set(&Tensor::zeros(1, 1, 5, 4)).is_err());
    }

    #[test]
    fn attention_with_zero_excitation_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = SqExParams::new(6, 8, &mut rng).unwrap();
        assert_eq!(p.hidden, 4);
        p.w2.value.iter_mut().for_each(|v| *v = 0.0);
        let f = rand_tensor(&mut rng, [2, 6, 4, 4]);
        let a = channel_attention(&f, &p).unwrap();
        assert_eq!(a.values.len(), 12);
        assert!(a.values.iter().all(|&v| v == 0.5));
        assert!(channel_attention(&rand_tensor(&mut rng, [1, 5, 2, 2]), &p).is_err());
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        // Two channels of a 2×2 map, hidden width 1 with hand-set weights.
        let f = Tensor::from_vec(1, 2, 2, 2, vec![0.1, 0.3, 0.5, 0.7, 1.0, 0.0, 0.0, 0.2]).unwrap();
        let p = SqExParams {
            channels: 2,
            hidden: 1,
            reduction_ratio: 2,
            w1: Param { shape: vec![1, 2], value: vec![2.0, -1.0], grad: vec![] },
            b1: Param { shape: vec![1], value: vec![0.1], grad: vec![] },
            w2: Param { shape: vec![2, 1], value: vec![1.5, -0.5], grad: vec![] },
            b2: Param { shape: vec![2], value: vec![0.0, 0.25], grad: vec![] },
        };
        let s0 = (0.1 + 0.3 + 0.5 + 0.7) / 4.0;
        let s1 = (1.0 + 0.0 + 0.0 + 0.2) / 4.0;
        let hidden = (2.0 * s0 - s1 + 0.1f64).max(0.0);
        let expect = [
            1.0 / (1.0 + (-(1.5 * hidden)).exp()),
            1.0 / (1.0 + (-(-0.5 * hidden + 0.25)).exp()),
        ];
        let a = channel_attention(&f, &p).unwrap();
        for k in 0..2 {
            assert!((a.values[k] - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_shapes_and_zero_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = WdeppParams::new(1, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, [1, 1, 4, 4]);
        assert_eq!(wdepp_pool(&x, &p).unwrap().shape(), [1, 1, 2, 2]);
        let z = wdepp_pool(&Tensor::zeros(1, 1, 4, 4), &p).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));

        let p32 = WdeppParams::new(32, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, [1, 32, 64, 64]);
        let y = wdepp_pool(&x, &p32).unwrap();
        assert_eq!(y.shape(), [1, 32, 32, 32]);
        assert!(y.data.iter().all(|&v| v >= 0.0));
        assert!(wdepp_pool(&Tensor::zeros(1, 1, 6, 5), &p).is_err());
    }

    #[test]
    fn nan_parameters_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = WdeppParams::new(2, &mut rng).unwrap();
        p.sqex.b1.value[0] = f64::NAN;
        assert!(matches!(
            wdepp_pool(&Tensor::zeros(1, 2, 4, 4), &p),
            Err(Error::Validation(_))
        ));
    }
}
