//! Quantitative instruments for the image pipeline.
//!
//! Pixel fidelity (PSNR, SSIM), masked edit consistency, programmatic
//! prompt compliance, and a Fréchet distance over frozen-encoder
//! embeddings. Every metric is a deterministic function of its inputs;
//! set-valued metrics are additionally invariant to input order.

mod compliance;
mod error;
mod fidelity;
mod frechet;
mod report;

pub use compliance::{
    compliance_report, compliance_score, quantize_pixel, ComplianceCheck, ComplianceReport,
    MIN_COMPONENT_PIXELS, PALETTE_REJECT_DIST,
};
pub use error::MetricError;
pub use fidelity::{edit_consistency, psnr, ssim, PSNR_CAP_DB, SSIM_WINDOW};
pub use frechet::{frechet_distance, micro_fid, COV_REGULARIZATION, FID_MIN_SAMPLES};
pub use report::MetricReport;
