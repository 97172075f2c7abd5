//! PSNR/SSIM metrics, median and non-local-means baselines, and reporting.

pub mod filters;
pub mod metrics;
pub mod report;

pub use filters::{median_filter, nlm_filter};
pub use metrics::{mse, psnr, psnr_roi, ssim, ssim_map, ssim_roi, Psnr, RoiMask, SsimConfig};
pub use report::{
    evaluate_report, sweep_best, EvalOptions, EvalPair, Method, MethodSummary, MetricsReport,
    ReportRow, RowOutcome,
};
