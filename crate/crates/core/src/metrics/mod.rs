//! Evaluation metrics and the timing harness.
//!
//! Point clouds are in metres; geometry distances are reported in centimetres.

mod bench;
mod geometry;
mod image;
mod report;

pub use bench::{bench, fingerprint, Fingerprint, StageTiming, TimingReport};
pub use geometry::{chamfer, fscore, gaussian_samples, nearest_distances, Chamfer, GeometryReport, DEFAULT_TAU_CM};
pub use image::{psnr, ssim, ImageReport, PSNR_CAP};
pub use report::{write_csv, write_json};

#[cfg(test)]
mod tests;
