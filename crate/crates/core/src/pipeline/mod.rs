//! Data ingestion, patching, training, inference, colour fusion and the
//! pooling ablation.

mod ablation;
mod color;
mod config;
mod data;
mod inference;
mod patches;
mod synthetic;
mod train;

pub use ablation::{run_ablation, AblationReport, ModeSummary};
pub use color::{fuse_color, fuse_color_yuv, rgb_to_yuv, yuv_to_rgb, ColorFusion, Yuv};
pub use config::TrainingConfig;
pub use data::{
    load_manifest, load_pairs, parse_manifest, split_pairs, ImagePair, ManifestEntry, ModalityTag,
    PAIR_DIM_MULTIPLE,
};
pub use inference::{fuse_pair, Fused};
pub use patches::{extract_patches, patch_batch, PatchPair};
pub use synthetic::synthetic_dataset;
pub use train::{read_loss_csv, train, write_loss_csv, TrainOutcome, LOSS_CSV_HEADER};
