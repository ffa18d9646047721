//! Unsupervised multimodal medical image fusion with a wavelet-pooled U-Net.
//!
//! The crate is organized bottom-up:
//!
//! - [`wavelet`]: single-level Haar analysis/synthesis and subband-selective
//!   reconstruction.
//! - [`wdepp`]: the wavelet-decomposition edge-preserving pooling layer.
//! - [`network`]: the U-Net autoencoder and its training-mode backward pass.
//! - [`losses`]: intensity, Sobel-gradient and MS-SSIM structure terms.
//! - [`metrics`]: the nine fusion quality metrics and CSV reports.
//! - [`pipeline`]: data ingestion, patching, training, inference, colour
//!   fusion and the pooling ablation.

pub mod checkpoint;
pub mod error;
pub mod filters;
pub mod image;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod wavelet;
pub mod wdepp;

pub use error::{Error, Result};
pub use image::{ColorImage, Image};
pub use network::{build_model, ModelState, NetworkConfig, PoolingMode};
pub use tensor::{FeatureMap, Tensor};
