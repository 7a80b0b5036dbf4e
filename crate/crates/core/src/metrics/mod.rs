//! Benchmark metrics for parsing, alignment and attribute recognition.

mod attributes;
mod landmarks;
mod report;
mod segmentation;

pub use attributes::{accuracy_by_group, group_discrepancy, mean_accuracy, AttributeAccumulator, Discrepancy, GroupAccuracy};
pub use landmarks::{auc_ced, failure_rate, nme, CedCurve, Normalizer, NormalizerKind, WFLW_OUTER_EYES};
pub use report::{AttributeReport, GroupReport, LandmarkReport, MetricReport, SegmentationReport};
pub use segmentation::{f1_scores, ConfusionAccumulator, F1Scores};
