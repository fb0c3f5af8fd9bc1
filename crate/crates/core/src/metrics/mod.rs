//! Confusion-matrix metrics: one-vs-rest counts, per-class and macro
//! averaged percentages, text/JSON reports.

pub mod confusion;
pub mod report;

pub use confusion::{BinaryCounts, ConfusionMatrix};
pub use report::{
    compute_report, present_overall, ClassReport, ClassValues, Discrepancy, MetricsReport, Reference, Rounding,
    DEFAULT_TOLERANCE, METRIC_NAMES,
};
