use super::manifest::{ManifestRecord, RejectReason};
use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub landmarks: Vec<Point>,
}

/// Face detector returning scored five-point detections for a record.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, record: &ManifestRecord) -> std::result::Result<Vec<Detection>, RejectReason>;
}

/// Reads the detections already stored in the manifest. The record carries
/// a single score (the image maximum), which every face inherits.
#[derive(Debug, Clone, Copy, Default)]
pub struct ManifestDetector;

impl FaceDetector for ManifestDetector {
    fn detect(&self, record: &ManifestRecord) -> std::result::Result<Vec<Detection>, RejectReason> {
        record.validate()?;
        Ok(record
            .faces()
            .into_iter()
            .map(|landmarks| Detection { score: record.face_score, landmarks })
            .collect())
    }
}

/// Score an image by its best face; images without faces score 0.
pub fn image_score(detections: &[Detection]) -> f64 {
    detections.iter().map(|d| d.score).fold(0.0, f64::max)
}
