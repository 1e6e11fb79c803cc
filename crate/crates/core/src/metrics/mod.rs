//! Image fidelity metrics, the analytic operation counter and the
//! denominator scanner.

mod image;
mod ops;
mod singularity;

pub use image::{
    cap_psnr, from_8bit, luma, psnr, psnr_rgb, ssim_plane, ssim_y, to_8bit, PSNR_CAP_DB,
};
pub use ops::{count_layer, count_ops, format_table, LayerOps, OpCountReport, OpKind, OpLayer};
pub use singularity::{singularity_scan, ScanResult};
