//! Benchmark report in machine-readable and tabular form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attributes::{Discrepancy, GroupAccuracy};
use super::landmarks::NormalizerKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<Option<f64>>,
    pub mean_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub normalizer: NormalizerKind,
    pub normalizer_definition: String,
    pub samples: usize,
    /// Mean NME as a ratio.
    pub nme: f64,
    pub failure_threshold: f64,
    pub failure_rate: f64,
    pub auc_threshold: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub samples: u64,
    pub mean_accuracy: f64,
    pub per_attribute: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub accuracies: BTreeMap<String, GroupAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<Discrepancy>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarkReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupReport>,
}

fn check_percent(name: &str, v: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::Numerical(format!("{name} = {v} is outside [0, 100]")));
    }
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.segmentation {
            for v in s.per_class.iter().chain(std::iter::once(&s.mean_f1)).flatten() {
                check_percent("F1", *v)?;
            }
        }
        if let Some(l) = &self.landmarks {
            if !(l.nme.is_finite() && l.nme >= 0.0) {
                return Err(Error::Numerical(format!("NME = {}", l.nme)));
            }
            check_percent("FR", l.failure_rate)?;
            check_percent("AUC", l.auc)?;
        }
        if let Some(a) = &self.attributes {
            check_percent("mAcc", a.mean_accuracy)?;
            for v in &a.per_attribute {
                check_percent("attribute accuracy", *v)?;
            }
        }
        if let Some(g) = &self.groups {
            for (k, v) in &g.accuracies {
                check_percent(k, v.accuracy)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&s)
    }

    /// Plain-text table, one block per task.
    pub fn table(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.segmentation {
            let names: Vec<&str> = s.class_names.iter().map(String::as_str).skip(1).collect();
            let _ = writeln!(out, "face parsing (F1, %)");
            let _ = writeln!(out, "{:>10} | {}", "mean", names.iter().map(|n| format!("{n:>8}")).collect::<Vec<_>>().join(" "));
            let vals: Vec<String> = s.per_class.iter().skip(1).map(|v| format!("{:>8}", pct(*v))).collect();
            let _ = writeln!(out, "{:>10} | {}", pct(s.mean_f1), vals.join(" "));
        }
        if let Some(l) = &self.landmarks {
            let _ = writeln!(out, "face alignment ({} normalised by {}; n = {})", l.normalizer.label(), l.normalizer_definition, l.samples);
            let fr = format!("FR@{}", l.failure_threshold);
            let auc = format!("AUC@{}", l.auc_threshold);
            let _ = writeln!(out, "{:>18} {:>10} {:>10}", format!("{} (%)", l.normalizer.label()), fr, auc);
            let _ = writeln!(out, "{:>18.3} {:>10.2} {:>10.2}", 100.0 * l.nme, l.failure_rate, l.auc);
        }
        if let Some(a) = &self.attributes {
            let _ = writeln!(out, "attributes (n = {})", a.samples);
            let _ = writeln!(out, "{:>10}", "mAcc (%)");
            let _ = writeln!(out, "{:>10.2}", a.mean_accuracy);
        }
        if let Some(g) = &self.groups {
            let _ = writeln!(out, "accuracy by group (%)");
            for (k, v) in &g.accuracies {
                let _ = writeln!(out, "{k:>16} {:>8.2} (n = {})", v.accuracy, v.samples);
            }
            if let Some(d) = &g.discrepancy {
                let _ = writeln!(out, "{:>16} {:>+8.2} ({} vs {})", "discrepancy", d.difference, d.pooled.join("+"), d.reference);
            }
        }
        out
    }
}
