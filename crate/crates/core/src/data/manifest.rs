//! Newline-delimited manifest records with an optional `#` header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// One image-text pair. Field order is the on-disk column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_ref: String,
    pub caption: String,
    /// Highest detection score over the faces in the image.
    pub face_score: f64,
    pub face_count: usize,
    /// Five `(x, y)` points per face, flattened face by face.
    pub landmarks: Vec<f64>,
}

impl ManifestRecord {
    pub fn new(image_ref: impl Into<String>, caption: impl Into<String>, face_score: f64, faces: &[Vec<Point>]) -> Self {
        Self {
            image_ref: image_ref.into(),
            caption: caption.into(),
            face_score,
            face_count: faces.len(),
            landmarks: faces.iter().flatten().flat_map(|p| [p[0], p[1]]).collect(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), RejectReason> {
        if !(0.0..=1.0).contains(&self.face_score) {
            return Err(RejectReason::ScoreOutOfRange);
        }
        if self.landmarks.len() != self.face_count * 10 {
            return Err(RejectReason::FaceCountMismatch);
        }
        if self.landmarks.iter().any(|v| !v.is_finite()) {
            return Err(RejectReason::NonFiniteLandmark);
        }
        Ok(())
    }

    pub fn faces(&self) -> Vec<Vec<Point>> {
        self.landmarks
            .chunks(10)
            .map(|f| f.chunks(2).map(|c| [c[0], c[1]]).collect())
            .collect()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

/// Metadata recorded on the first line of a curated manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub threshold: f64,
    pub score_rule: String,
    pub seed: u64,
    pub target_size: usize,
    pub seen: u64,
    pub qualifying: u64,
    pub rejected: u64,
}

pub const SCORE_RULE: &str = "max_face_score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unparseable,
    ScoreOutOfRange,
    FaceCountMismatch,
    NonFiniteLandmark,
    DetectorFailure,
}

/// A record that could not be used, with its source line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub line: u64,
    pub reason: RejectReason,
    pub record: Option<ManifestRecord>,
    pub raw: String,
}

impl Reject {
    /// The record's columns followed by `reason`; unparseable lines keep
    /// their raw text instead.
    pub fn to_line(&self) -> String {
        let reason = serde_json::to_value(self.reason).expect("reason serialises");
        let mut obj = match &self.record {
            Some(r) => serde_json::to_value(r).expect("record serialises"),
            None => serde_json::json!({ "raw": self.raw }),
        };
        let map = obj.as_object_mut().expect("object");
        map.insert("line".into(), self.line.into());
        map.insert("reason".into(), reason);
        serde_json::to_string(&obj).expect("reject serialises")
    }
}

/// Parses one manifest line.
pub fn parse_line(line_no: u64, line: &str) -> std::result::Result<ManifestRecord, Reject> {
    let reject = |reason, record| Reject { line: line_no, reason, record, raw: line.to_string() };
    let record: ManifestRecord = serde_json::from_str(line).map_err(|_| reject(RejectReason::Unparseable, None))?;
    record.validate().map_err(|r| reject(r, Some(record.clone())))?;
    Ok(record)
}

/// Streaming reader yielding each data line as a record or a reject.
pub struct ManifestReader<R> {
    lines: std::io::Lines<R>,
    line_no: u64,
    header: Option<ManifestHeader>,
    pending: Option<std::result::Result<ManifestRecord, Reject>>,
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut this = Self { lines: reader.lines(), line_no: 0, header: None, pending: None };
        while let Some(line) = this.lines.next() {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            this.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if this.line_no == 1 {
                    this.header = serde_json::from_str(h.trim()).ok();
                }
                continue;
            }
            this.pending = Some(parse_line(this.line_no, &line));
            break;
        }
        Ok(this)
    }

    pub fn header(&self) -> Option<&ManifestHeader> {
        self.header.as_ref()
    }
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(f))
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = std::result::Result<ManifestRecord, Reject>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(p) = self.pending.take() {
            return Some(p);
        }
        for line in self.lines.by_ref() {
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(_) => {
                    return Some(Err(Reject {
                        line: self.line_no,
                        reason: RejectReason::Unparseable,
                        record: None,
                        raw: String::new(),
                    }))
                }
            };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            return Some(parse_line(self.line_no, &line));
        }
        None
    }
}

/// Reads a whole manifest, failing on the first bad line.
pub fn read_manifest(path: &Path) -> Result<(Option<ManifestHeader>, Vec<ManifestRecord>)> {
    let reader = ManifestReader::open(path)?;
    let header = reader.header().cloned();
    let records = reader
        .map(|r| r.map_err(|rej| Error::input(format!("{}:{}: {:?}", path.display(), rej.line, rej.reason))))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

pub fn manifest_to_string(header: Option<&ManifestHeader>, records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str("# ");
        out.push_str(&serde_json::to_string(h).expect("header serialises"));
        out.push('\n');
    }
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, header: Option<&ManifestHeader>, records: &[ManifestRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(manifest_to_string(header, records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut out = String::new();
    for r in rejects {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
