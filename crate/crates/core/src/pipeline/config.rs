use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, PoolingMode};
use crate::optim::AdamConfig;

/// Training protocol and network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub patch_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub pooling_mode: PoolingMode,
    /// Minimum of `max(std(tile_a), std(tile_b))` on the `[0, 1]` scale for
    /// a tile to be kept.
    pub patch_keep_threshold: f64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Fraction of pairs held out from training (by pair, not by patch).
    pub validation_fraction: f64,
    pub base_channels: usize,
    pub encoder_blocks: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            patch_size: 64,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            pooling_mode: PoolingMode::Wdepp,
            patch_keep_threshold: 0.02,
            max_steps: None,
            validation_fraction: 0.1,
            base_channels: 32,
            encoder_blocks: 4,
        }
    }
}

impl TrainingConfig {
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig::with_depth(self.base_channels, self.encoder_blocks, self.pooling_mode)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.patch_size % 8 != 0 {
            return bad(format!("patch_size {} must be a positive multiple of 8", self.patch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive when given".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if !(self.patch_keep_threshold.is_finite() && self.patch_keep_threshold >= 0.0) {
            return bad("patch_keep_threshold must be a finite non-negative number".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        let net = self.network_config();
        net.validate()?;
        if self.patch_size % net.spatial_multiple() != 0 {
            return bad(format!(
                "patch_size {} is not divisible by {} for {} encoder blocks",
                self.patch_size,
                net.spatial_multiple(),
                self.encoder_blocks
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = TrainingConfig::default();
        assert_eq!((c.patch_size, c.epochs, c.batch_size), (64, 30, 32));
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        assert!(c.validate().is_ok());
        assert_eq!(c.network_config(), NetworkConfig::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cases = [
            TrainingConfig { patch_size: 60, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { learning_rate: -1.0, ..Default::default() },
            TrainingConfig { validation_fraction: 1.0, ..Default::default() },
            TrainingConfig { encoder_blocks: 5, patch_size: 8, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
