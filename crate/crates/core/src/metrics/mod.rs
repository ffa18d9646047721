//! The nine fusion quality metrics and their CSV report.
//!
//! Every metric first quantizes its inputs to 8-bit levels
//! `round(255 · clip(x, 0, 1))` and works on that integer-valued grid.
//!
//! | metric | inputs | definition |
//! |---|---|---|
//! | EN | f | Shannon entropy (bits) of the 256-bin histogram |
//! | SD | f | population standard deviation of the levels |
//! | SF | f | `sqrt(RF² + CF²)`, RMS of horizontal / vertical first differences over all `M·N` pixels |
//! | Q_AB/F | f, a, b | Xydeas–Petrović edge transfer with Sobel strength/orientation |
//! | MI | f, a, b | `MI(A,F) + MI(B,F)` from 256×256 joint histograms, log base 2 |
//! | Q_C | f, a, b | Cvejić covariance-weighted windowed SSIM, 7×7 windows |
//! | Q_Y | f, a, b | Yang saliency-selected windowed SSIM, 7×7 windows |
//! | SCD | f, a, b | `r(f − b, a) + r(f − a, b)` |
//! | VIFF | f, a, b | four-scale pixel-domain visual information fidelity |
//!
//! See the individual modules for the frozen constants.

mod basic;
mod common;
mod edge;
mod information;
mod report;
mod structural;
mod viff;

pub use basic::{entropy, spatial_frequency, std_dev};
pub use edge::{q_abf, QABF_ALPHA_KAPPA, QABF_ALPHA_SIGMA, QABF_G_KAPPA, QABF_G_SIGMA};
pub use information::{mutual_information, mutual_information_metric, scd};
pub use report::{evaluate_all, read_csv, write_csv, MetricReport, MetricRow, CSV_HEADER, METRIC_NAMES};
pub use structural::{q_c, q_y, WINDOW as QUALITY_WINDOW};
pub use viff::{viff, VIFF_NOISE_VARIANCE, VIFF_SCALE_WEIGHTS};
