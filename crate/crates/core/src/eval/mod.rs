//! Metrics, per-frame timelines and the leave-one-user-out harness.

pub mod harness;
pub mod metrics;
pub mod timeline;

pub use harness::{run_louo, FoldReport, LouoOptions, LouoOutcome, LouoReport, TrialDecisions};
pub use metrics::{
    confusion_matrix, edit_score, frame_accuracy, levenshtein, segment_string, write_reports_csv,
    MetricReport,
};
pub use timeline::{save_timeline, timeline_export};
