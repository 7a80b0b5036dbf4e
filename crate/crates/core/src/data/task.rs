//! Per-image records for downstream tasks and for prediction files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resize_image, Point, SimilarityTransform};
use crate::image::{ImageTensor, LabelMap};

/// One downstream sample or prediction. Paths are relative to the file that
/// lists them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Label-map PNG for parsing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    /// Flattened `(x, y)` landmark list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<f64>>,
    /// Face box `[x0, y0, x1, y1]` used by box-based normalisers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    /// Attribute bits (0/1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<u8>>,
    /// Demographic group for discrepancy reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl TaskRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), image: None, labels: None, landmarks: None, bbox: None, attributes: None, group: None }
    }

    pub fn points(&self) -> Option<Vec<Point>> {
        self.landmarks.as_ref().map(|v| v.chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn attribute_bools(&self) -> Option<Vec<bool>> {
        self.attributes.as_ref().map(|v| v.iter().map(|&b| b != 0).collect())
    }

    pub fn resolve(base: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn flatten_points(pts: &[Point]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p[0], p[1]]).collect()
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn to_ndjson<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    std::fs::write(path, to_ndjson(items)).map_err(|e| Error::io(path, e))
}

/// A task record with its image loaded and all annotations moved into the
/// `size × size` model input frame.
#[derive(Debug, Clone)]
pub struct TaskSample {
    pub id: String,
    pub image: ImageTensor,
    /// Side length of the source image.
    pub source_size: usize,
    pub labels: Option<LabelMap>,
    pub landmarks: Option<Vec<Point>>,
    pub bbox: Option<[f64; 4]>,
    pub attributes: Option<Vec<bool>>,
    pub group: Option<String>,
}

/// Nearest-neighbour resampling of a square label map.
pub fn resize_labels(labels: &LabelMap, size: usize) -> Result<LabelMap> {
    if labels.height() != labels.width() {
        return Err(Error::dim("label resize expects a square map"));
    }
    let src = labels.width();
    if src == size {
        return Ok(labels.clone());
    }
    let pick = |o: usize| (((o as f64 + 0.5) * src as f64 / size as f64 - 0.5).round().max(0.0) as usize).min(src - 1);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push(labels.get(pick(y), pick(x)));
        }
    }
    LabelMap::new(size, size, out)
}

fn move_box(t: &SimilarityTransform, b: [f64; 4]) -> [f64; 4] {
    let p = t.apply([b[0], b[1]]);
    let q = t.apply([b[2], b[3]]);
    [p[0], p[1], q[0], q[1]]
}

impl TaskSample {
    /// Loads the record's image and label map relative to `base`.
    pub fn load(record: &TaskRecord, base: &Path, size: usize) -> Result<Self> {
        let rel = record.image.as_deref().ok_or_else(|| Error::input(format!("record {} has no image", record.id)))?;
        let image = ImageTensor::load(&TaskRecord::resolve(base, rel))?;
        if image.height() != image.width() {
            return Err(Error::dim(format!("record {}: task images must be square", record.id)));
        }
        let source_size = image.width();
        let t = SimilarityTransform::resize(source_size, size);
        let labels = match &record.labels {
            Some(rel) => {
                let l = LabelMap::load(&TaskRecord::resolve(base, rel))?;
                if (l.height(), l.width()) != (source_size, source_size) {
                    return Err(Error::dim(format!("record {}: label map and image sizes differ", record.id)));
                }
                Some(resize_labels(&l, size)?)
            }
            None => None,
        };
        Ok(Self {
            id: record.id.clone(),
            image: if source_size == size { image } else { resize_image(&image, size)? },
            source_size,
            labels,
            landmarks: record.points().map(|v| v.into_iter().map(|p| t.apply(p)).collect()),
            bbox: record.bbox.map(|b| move_box(&t, b)),
            attributes: record.attribute_bools(),
            group: record.group.clone(),
        })
    }

    /// Maps model-frame points back to the source image.
    pub fn to_source(&self, pts: &[Point], size: usize) -> Vec<Point> {
        let t = SimilarityTransform::resize(size, self.source_size);
        pts.iter().map(|&p| t.apply(p)).collect()
    }
}

/// Reads a task manifest and loads every sample at the model resolution.
pub fn load_task_samples(manifest: &Path, size: usize) -> Result<Vec<TaskSample>> {
    let records: Vec<TaskRecord> = read_ndjson(manifest)?;
    if records.is_empty() {
        return Err(Error::input(format!("{} lists no samples", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    records.iter().map(|r| TaskSample::load(r, base, size)).collect()
}
