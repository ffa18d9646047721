//! U-Net autoencoder with configurable pooling between encoder blocks.
//!
//! Encoder block `i` has `base · 2^i` channels and runs (conv3×3 → BN → ReLU)
//! twice. Blocks `0..L` are followed by a pooling site; block `L` is the
//! bottleneck. Each decoder step upsamples with a 2×2 stride-2 transposed
//! convolution, concatenates the matching pre-pool encoder activation and
//! runs another double conv block. A 1×1 convolution and a sigmoid produce
//! the fused channel.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    avg_pool2, avg_pool2_backward, max_pool2, max_pool2_backward, relu, relu_backward, sigmoid,
    BatchNorm2d, BnCache, Conv2d, ConvTranspose2x2, Param,
};
use crate::tensor::Tensor;
use crate::wdepp::{wdepp_backward, wdepp_forward, wdepp_pool, WdeppCache, WdeppParams};

/// Stream offset separating pooling-site initialization from the rest, so
/// that seed-matched models with different pooling share conv weights.
const POOL_STREAM: u64 = 0x5744_4550_5000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Wdepp,
    Max,
    Average,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 3] = [PoolingMode::Max, PoolingMode::Average, PoolingMode::Wdepp];

    pub fn as_str(&self) -> &'static str {
        match self {
            PoolingMode::Wdepp => "wdepp",
            PoolingMode::Max => "max",
            PoolingMode::Average => "average",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wdepp" => Ok(PoolingMode::Wdepp),
            "max" => Ok(PoolingMode::Max),
            "average" | "avg" => Ok(PoolingMode::Average),
            other => Err(Error::Config(format!("unknown pooling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub pooling_mode: PoolingMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: 32,
            encoder_blocks: 4,
            decoder_blocks: 3,
            input_channels: 2,
            output_channels: 1,
            pooling_mode: PoolingMode::Wdepp,
        }
    }
}

impl NetworkConfig {
    /// Config with `levels` encoder blocks (and one fewer decoder blocks).
    pub fn with_depth(base_channels: usize, levels: usize, pooling_mode: PoolingMode) -> Self {
        NetworkConfig {
            base_channels,
            encoder_blocks: levels,
            decoder_blocks: levels.saturating_sub(1),
            pooling_mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.encoder_blocks == 0 || self.encoder_blocks != self.decoder_blocks + 1 {
            return Err(Error::Config(format!(
                "encoder_blocks ({}) must equal decoder_blocks ({}) + 1",
                self.encoder_blocks, self.decoder_blocks
            )));
        }
        if self.input_channels != 2 || self.output_channels != 1 {
            return Err(Error::Config(
                "the fusion network maps 2 input channels to 1 output channel".into(),
            ));
        }
        if self.base_channels.checked_shl(self.decoder_blocks as u32).is_none() || self.decoder_blocks > 16 {
            return Err(Error::Config("channel plan overflows".into()));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.decoder_blocks
    }
}

/// Two stacked conv3×3 → BN → ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

struct BlockCache {
    input: Tensor,
    bn1: BnCache,
    a1: Tensor,
    bn2: BnCache,
    a2: Tensor,
}

impl ConvBlock {
    fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv1: Conv2d::new(cin, cout, 3, 1, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            bn2: BatchNorm2d::new(cout),
        }
    }

    fn forward_eval(&self, x: &Tensor, mixed: bool) -> Result<Tensor> {
        let conv = |c: &Conv2d, t: &Tensor| if mixed { c.forward_mixed(t) } else { c.forward(t) };
        let mut a1 = conv(&self.conv1, x)?;
        self.bn1.eval_in_place(&mut a1, true)?;
        let mut a2 = conv(&self.conv2, &a1)?;
        self.bn2.eval_in_place(&mut a2, true)?;
        Ok(a2)
    }

    fn forward_train(&mut self, x: Tensor) -> Result<BlockCache> {
        let (z1, bn1) = self.bn1.forward_train(&self.conv1.forward(&x)?)?;
        let a1 = relu(&z1);
        let (z2, bn2) = self.bn2.forward_train(&self.conv2.forward(&a1)?)?;
        let a2 = relu(&z2);
        Ok(BlockCache {
            input: x,
            bn1,
            a1,
            bn2,
            a2,
        })
    }

    fn backward(&mut self, cache: &BlockCache, d_out: &Tensor) -> Tensor {
        let d = relu_backward(&cache.a2, d_out);
        let d = self.bn2.backward(&cache.bn2, &d);
        let d = self.conv2.backward(&cache.a1, &d);
        let d = relu_backward(&cache.a1, &d);
        let d = self.bn1.backward(&cache.bn1, &d);
        self.conv1.backward(&cache.input, &d)
    }
}

/// What sits between two encoder blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolSite {
    Wdepp(Box<WdeppParams>),
    Max,
    Average,
}

enum PoolCache {
    Wdepp(Box<WdeppCache>),
    Max { shape: [usize; 4], argmax: Vec<usize> },
    Average { shape: [usize; 4] },
}

impl PoolSite {
    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            PoolSite::Wdepp(p) => wdepp_pool(x, p),
            PoolSite::Max => Ok(max_pool2(x)?.0),
            PoolSite::Average => avg_pool2(x),
        }
    }

    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, PoolCache)> {
        match self {
            PoolSite::Wdepp(p) => {
                let (y, c) = wdepp_forward(x, p)?;
                Ok((y, PoolCache::Wdepp(Box::new(c))))
            }
            PoolSite::Max => {
                let (y, argmax) = max_pool2(x)?;
                Ok((
                    y,
                    PoolCache::Max {
                        shape: x.shape(),
                        argmax,
                    },
                ))
            }
            PoolSite::Average => Ok((avg_pool2(x)?, PoolCache::Average { shape: x.shape() })),
        }
    }

    fn backward(&mut self, cache: &PoolCache, dy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (PoolSite::Wdepp(p), PoolCache::Wdepp(c)) => wdepp_backward(p, c, dy),
            (PoolSite::Max, PoolCache::Max { shape, argmax }) => {
                Ok(max_pool2_backward(*shape, argmax, dy))
            }
            (PoolSite::Average, PoolCache::Average { shape }) => Ok(avg_pool2_backward(*shape, dy)),
            _ => Err(Error::dim("pooling cache does not match pooling site")),
        }
    }
}

/// Activations recorded by a training-mode forward pass.
pub struct ForwardTrace {
    encoder: Vec<BlockCache>,
    pools: Vec<PoolCache>,
    up_inputs: Vec<Tensor>,
    decoder: Vec<BlockCache>,
    head_input: Tensor,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Hash of every ReLU on/off state and max-pool winner. Two inputs with
    /// the same signature lie in the same piecewise-smooth region.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in self.encoder.iter().chain(&self.decoder) {
            for t in [&b.a1, &b.a2] {
                for v in &t.data {
                    (*v > 0.0).hash(&mut h);
                }
            }
        }
        for p in &self.pools {
            match p {
                PoolCache::Wdepp(c) => c.activation_pattern().for_each(|v| v.hash(&mut h)),
                PoolCache::Max { argmax, .. } => argmax.hash(&mut h),
                PoolCache::Average { .. } => {}
            }
        }
        h.finish()
    }
}

/// All learned parameters and normalization statistics of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: NetworkConfig,
    pub encoder: Vec<ConvBlock>,
    pub pools: Vec<PoolSite>,
    pub upsample: Vec<ConvTranspose2x2>,
    pub decoder: Vec<ConvBlock>,
    pub head: Conv2d,
    pub training_step: u64,
    pub seed: u64,
}

macro_rules! walk_params {
    ($name:ident, $iter:ident $(, $m:tt)?) => {
        /// Every learnable tensor under a stable dotted name.
        pub fn $name(&$($m)? self) -> Vec<(String, &$($m)? Param)> {
            let mut out = Vec::new();
            fn block<'a>(prefix: String, b: &'a $($m)? ConvBlock, out: &mut Vec<(String, &'a $($m)? Param)>) {
                let ConvBlock { conv1, bn1, conv2, bn2 } = b;
                out.push((format!("{prefix}.conv1.weight"), &$($m)? conv1.weight));
                out.push((format!("{prefix}.conv1.bias"), &$($m)? conv1.bias));
                out.push((format!("{prefix}.bn1.gamma"), &$($m)? bn1.gamma));
                out.push((format!("{prefix}.bn1.beta"), &$($m)? bn1.beta));
                out.push((format!("{prefix}.conv2.weight"), &$($m)? conv2.weight));
                out.push((format!("{prefix}.conv2.bias"), &$($m)? conv2.bias));
                out.push((format!("{prefix}.bn2.gamma"), &$($m)? bn2.gamma));
                out.push((format!("{prefix}.bn2.beta"), &$($m)? bn2.beta));
            }
            for (i, b) in self.encoder.$iter().enumerate() {
                block(format!("enc{i}"), b, &mut out);
            }
            for (i, site) in self.pools.$iter().enumerate() {
                if let PoolSite::Wdepp(p) = site {
                    let WdeppParams { sqex, projection, .. } = &$($m)? **p;
                    out.push((format!("pool{i}.sqex.w1"), &$($m)? sqex.w1));
                    out.push((format!("pool{i}.sqex.b1"), &$($m)? sqex.b1));
                    out.push((format!("pool{i}.sqex.w2"), &$($m)? sqex.w2));
                    out.push((format!("pool{i}.sqex.b2"), &$($m)? sqex.b2));
                    out.push((format!("pool{i}.proj.weight"), &$($m)? projection.weight));
                    out.push((format!("pool{i}.proj.bias"), &$($m)? projection.bias));
                }
            }
            for (i, (up, b)) in self.upsample.$iter().zip(self.decoder.$iter()).enumerate() {
                out.push((format!("up{i}.weight"), &$($m)? up.weight));
                out.push((format!("up{i}.bias"), &$($m)? up.bias));
                block(format!("dec{i}"), b, &mut out);
            }
            out.push(("head.weight".to_string(), &$($m)? self.head.weight));
            out.push(("head.bias".to_string(), &$($m)? self.head.bias));
            out
        }
    };
}

macro_rules! walk_norms {
    ($name:ident, $iter:ident $(, $m:tt)?) => {
        /// Every batch-norm layer under a stable dotted name.
        pub fn $name(&$($m)? self) -> Vec<(String, &$($m)? BatchNorm2d)> {
            let mut out = Vec::new();
            for (prefix, blocks) in [("enc", &$($m)? self.encoder), ("dec", &$($m)? self.decoder)] {
                for (i, b) in blocks.$iter().enumerate() {
                    let ConvBlock { bn1, bn2, .. } = b;
                    out.push((format!("{prefix}{i}.bn1"), bn1));
                    out.push((format!("{prefix}{i}.bn2"), bn2));
                }
            }
            out
        }
    };
}

impl ModelState {
    /// Deterministically initialize a model. Convolution, normalization and
    /// transpose layers draw from one stream and pooling sites from another,
    /// so the former are identical across pooling modes for a given seed.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool_rng = ChaCha8Rng::seed_from_u64(seed ^ POOL_STREAM);
        let levels = cfg.encoder_blocks;
        let mut encoder = Vec::with_capacity(levels);
        for i in 0..levels {
            let cin = if i == 0 { cfg.input_channels } else { cfg.channels_at(i - 1) };
            encoder.push(ConvBlock::new(cin, cfg.channels_at(i), &mut rng));
        }
        let mut pools = Vec::with_capacity(levels - 1);
        for i in 0..levels - 1 {
            pools.push(match cfg.pooling_mode {
                PoolingMode::Wdepp => {
                    PoolSite::Wdepp(Box::new(WdeppParams::new(cfg.channels_at(i), &mut pool_rng)?))
                }
                PoolingMode::Max => PoolSite::Max,
                PoolingMode::Average => PoolSite::Average,
            });
        }
        let mut upsample = Vec::with_capacity(cfg.decoder_blocks);
        let mut decoder = Vec::with_capacity(cfg.decoder_blocks);
        for j in 0..cfg.decoder_blocks {
            let from = cfg.channels_at(levels - 1 - j);
            let to = cfg.channels_at(levels - 2 - j);
            upsample.push(ConvTranspose2x2::new(from, to, &mut rng));
            decoder.push(ConvBlock::new(2 * to, to, &mut rng));
        }
        let head = Conv2d::new(cfg.base_channels, cfg.output_channels, 1, 0, &mut rng);
        Ok(ModelState {
            config: cfg,
            encoder,
            pools,
            upsample,
            decoder,
            head,
            training_step: 0,
            seed,
        })
    }

    walk_params!(named_params, iter);
    walk_params!(named_params_mut, iter_mut, mut);
    walk_norms!(norm_layers, iter);
    walk_norms!(norm_layers_mut, iter_mut, mut);

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let m = self.config.spatial_multiple();
        if x.c != self.config.input_channels {
            return Err(Error::dim(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels, x.c
            )));
        }
        if x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0 {
            return Err(Error::dim(format!(
                "input {}x{} is not divisible by {m}",
                x.h, x.w
            )));
        }
        x.ensure_finite("network input")
    }

    /// Inference-mode forward pass using running normalization statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inference(x, false)
    }

    /// [`ModelState::forward`] with the 3×3 convolution GEMMs in single
    /// precision. Agrees with the exact pass to roughly 1e-6 and is about
    /// twice as fast; used for fusing full-size images.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inference(x, true)
    }

    fn forward_inference(&self, x: &Tensor, mixed: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let levels = self.encoder.len();
        let mut skips = Vec::with_capacity(levels);
        let mut cur = x.clone();
        for i in 0..levels {
            let a = self.encoder[i].forward_eval(&cur, mixed)?;
            if i + 1 < levels {
                cur = self.pools[i].forward_eval(&a)?;
                skips.push(a);
            } else {
                cur = a;
            }
        }
        for j in 0..self.decoder.len() {
            let up = self.upsample[j].forward(&cur)?;
            let skip = &skips[levels - 2 - j];
            cur = self.decoder[j].forward_eval(&Tensor::concat_channels(&[&up, skip])?, mixed)?;
        }
        Ok(self.head.forward(&cur)?.map(sigmoid))
    }

    /// Training-mode forward pass: batch statistics, running-stat update and
    /// a trace for [`ModelState::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let levels = self.encoder.len();
        let mut encoder = Vec::with_capacity(levels);
        let mut pools = Vec::with_capacity(levels - 1);
        let mut cur = x.clone();
        for i in 0..levels {
            let cache = self.encoder[i].forward_train(cur)?;
            if i + 1 < levels {
                let (y, pc) = self.pools[i].forward_train(&cache.a2)?;
                pools.push(pc);
                cur = y;
            } else {
                cur = cache.a2.clone();
            }
            encoder.push(cache);
        }
        let mut up_inputs = Vec::with_capacity(self.decoder.len());
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for j in 0..self.decoder.len() {
            let up = self.upsample[j].forward(&cur)?;
            let cat = Tensor::concat_channels(&[&up, &encoder[levels - 2 - j].a2])?;
            up_inputs.push(cur);
            let cache = self.decoder[j].forward_train(cat)?;
            cur = cache.a2.clone();
            decoder.push(cache);
        }
        let output = self.head.forward(&cur)?.map(sigmoid);
        Ok(ForwardTrace {
            encoder,
            pools,
            up_inputs,
            decoder,
            head_input: cur,
            output,
        })
    }

    /// Accumulate parameter gradients for `d_output = ∂loss/∂output`.
    pub fn backward(&mut self, trace: &ForwardTrace, d_output: &Tensor) -> Result<Tensor> {
        if !d_output.same_shape(&trace.output) {
            return Err(Error::dim("output gradient shape mismatch"));
        }
        let mut d = d_output.clone();
        for (g, y) in d.data.iter_mut().zip(&trace.output.data) {
            *g *= y * (1.0 - y);
        }
        let mut d = self.head.backward(&trace.head_input, &d);
        let levels = self.encoder.len();
        let mut d_skip: Vec<Option<Tensor>> = (0..levels).map(|_| None).collect();
        for j in (0..self.decoder.len()).rev() {
            let dcat = self.decoder[j].backward(&trace.decoder[j], &d);
            let ch = dcat.c / 2;
            let mut parts = dcat.split_channels(&[ch, ch])?;
            d_skip[levels - 2 - j] = parts.pop();
            d = self.upsample[j].backward(&trace.up_inputs[j], &parts[0]);
        }
        for i in (0..levels).rev() {
            if i + 1 < levels {
                d = self.pools[i].backward(&trace.pools[i], &d)?;
                if let Some(s) = d_skip[i].take() {
                    d = d.add(&s)?;
                }
            }
            d = self.encoder[i].backward(&trace.encoder[i], &d);
        }
        Ok(d)
    }
}

/// Alias matching the operation name used across the toolkit.
pub fn build_model(cfg: NetworkConfig, seed: u64) -> Result<ModelState> {
    ModelState::build(cfg, seed)
}
