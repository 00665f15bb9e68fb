//! Image metrics, rollout and evaluation reports.

mod metrics;
mod report;
mod rollout;

pub use metrics::{
    error_map, mse, psnr, ssim, ErrorMap, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{
    compare_reports, evaluate_run, evaluate_run_with, gap_table_csv, gap_table_text, EvalConfig,
    FrameSink, GapRow, HorizonSummary, MetricRecord, MetricsReport, ReportMeta, GAP_CSV_HEADER,
    REPORT_CSV_HEADER,
};
pub use rollout::rollout;
