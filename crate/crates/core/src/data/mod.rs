//! Manifest ingestion, curation and dataset sampling.

pub mod curate;
pub mod detector;
pub mod manifest;
pub mod sampling;
pub mod task;

pub use curate::{curate_manifest, curate_sharded, CurateConfig, CurateOutcome, Reservoir};
pub use detector::{Detection, FaceDetector, ManifestDetector};
pub use manifest::{
    read_manifest, write_manifest, write_rejects, ManifestHeader, ManifestReader, ManifestRecord, Reject, RejectReason,
};
pub use sampling::{fewshot_count, fewshot_subset, mix_face_ratio, select_face, DatasetSplit};
pub use task::{load_task_samples, read_ndjson, resize_labels, to_ndjson, write_ndjson, TaskRecord, TaskSample};
