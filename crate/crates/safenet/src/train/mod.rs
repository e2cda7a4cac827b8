//! Training protocol: contiguous per-subject splits, Adam
//! optimization with early stopping and adaptive learning-rate decay,
//! and the regression/identity metric suite.

pub mod adam;
pub mod fit;
pub mod metrics;
pub mod split;

pub use adam::Adam;
pub use fit::{fit, partition_loss, EarlyStopper, EpochStats, FitResult, TrainConfig};
pub use metrics::{
    evaluate, gather_batch, report_from_predictions, JointMetrics, MetricReport,
};
pub use split::{apply_stats, fit_stats, split, SplitSpec};
