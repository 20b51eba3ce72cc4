//! Hungarian assignment, label alignment, and evaluation metrics.

mod hungarian;
mod metrics;

pub use hungarian::{hungarian, Assignment};
pub use metrics::{
    align_labels, compute_metrics, AlignmentMode, AlignmentResult, Contingency, MetricsReport,
};
