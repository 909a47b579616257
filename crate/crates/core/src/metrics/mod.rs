//! Evaluation: confusion matrices and per-label classification scores,
//! one-vs-rest ROC-AUC, box IoU with average precision, and latency timing.

mod classification;
mod detection;
mod latency;

use thiserror::Error;

pub use classification::{
    classification_report, confusion_matrix, roc_auc, roc_auc_per_label, ConfusionMatrix, LabelMetrics,
    MetricsReport, ROC_AUC_AVERAGING,
};
pub use detection::{
    average_precision, iou, map_range, iou_thresholds, BoundingBox, Detection, GroundTruth, MeanAveragePrecision,
};
pub use latency::{benchmark_latency, LatencyStats};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label {0:?} is not in the declared label set")]
    UnknownLabel(String),
    #[error("label set must be non-empty and free of duplicates")]
    InvalidLabels,
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("{scores} score vectors for {truths} truths")]
    LengthMismatch { scores: usize, truths: usize },
    #[error("score vectors disagree on the label set")]
    InconsistentScores,
    #[error("no label has both positive and negative samples")]
    NoEligibleLabel,
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("IoU threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("no images left to time after {warmup} warmup runs on {images}")]
    NothingToTime { images: usize, warmup: usize },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// `num / den`, with `0 / 0` taken as zero.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
