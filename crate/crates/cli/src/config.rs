//! File-driven run configuration with command-line overrides.

use std::path::{Path, PathBuf};

use facerep_core::encoders::EncoderConfig;
use facerep_core::heads::{HeadConfig, LayerSelection, TaskSpec};
use facerep_core::metrics::NormalizerKind;
use facerep_core::pretraining::{PretrainConfig, Toggles};
use facerep_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    #[default]
    Miniature,
    Base,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub preset: ModelPreset,
    /// Replaces the preset entirely when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
}

impl ModelSpec {
    pub fn encoder(&self) -> EncoderConfig {
        match (&self.encoder, self.preset) {
            (Some(e), _) => e.clone(),
            (None, ModelPreset::Miniature) => EncoderConfig::miniature(),
            (None, ModelPreset::Base) => EncoderConfig::base(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateSection {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Defaults to `<output stem>.rejects.jsonl` next to the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejects: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub target_size: usize,
    #[serde(default = "one")]
    pub shards: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Source of non-face records when mixing a face ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonface_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_ratio: Option<f64>,
    /// Mixed manifest size; defaults to the face manifest size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_size: Option<usize>,
    /// Mean-face template; the bundled one is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Smallest side of a random crop, as a fraction of the short image side.
    #[serde(default = "default_crop_min")]
    pub random_crop_min: f64,
    /// Overrides the step count implied by the schedule's epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_prefetch")]
    pub prefetch: usize,
    #[serde(default)]
    pub training: PretrainConfig,
}

/// How predictions are scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_normalizer")]
    pub normalizer: NormalizerKind,
    /// Landmark indices of the outer eye corners for the inter-ocular normaliser.
    #[serde(default = "default_eyes")]
    pub eyes: (usize, usize),
    #[serde(default = "default_tau")]
    pub failure_threshold: f64,
    #[serde(default = "default_tau")]
    pub auc_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_group: Option<String>,
    /// Groups pooled against the reference; empty means every other group.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pooled_groups: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            normalizer: default_normalizer(),
            eyes: default_eyes(),
            failure_threshold: default_tau(),
            auc_threshold: default_tau(),
            class_names: None,
            reference_group: None,
            pooled_groups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    pub task: TaskSpec,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Pre-training checkpoint providing the image backbone.
    pub backbone: PathBuf,
    pub output_dir: PathBuf,
    /// Input resolution; fine-tuning above the pre-training size resamples
    /// the positional table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub training: HeadConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub task: TaskSpec,
    pub predictions: PathBuf,
    pub ground_truth: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub metrics: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewshotSection {
    pub input: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcamSection {
    pub checkpoint: PathBuf,
    pub images: Vec<PathBuf>,
    pub queries: Vec<String>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub label: String,
    /// Run reports whose metrics fill this row.
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curate: Option<CurateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewshotSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcam: Option<GradcamSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
}

fn default_threshold() -> f64 {
    0.9
}
fn one() -> usize {
    1
}
fn default_crop_min() -> f64 {
    0.5
}
fn default_prefetch() -> usize {
    2
}
fn default_normalizer() -> NormalizerKind {
    NormalizerKind::Diag
}
fn default_eyes() -> (usize, usize) {
    (0, 1)
}
fn default_tau() -> f64 {
    0.1
}
fn default_fraction() -> f64 {
    1.0
}

/// Values given on the command line; each replaces its config counterpart.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub toggles: Option<Toggles>,
    pub resolution: Option<usize>,
    pub fraction: Option<f64>,
    pub layers: Option<LayerSelection>,
}

fn missing(section: &str) -> Error {
    Error::config(format!("this command needs a [{section}] section"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.deterministic |= o.deterministic;
        if let Some(t) = o.toggles {
            self.pretrain.as_mut().ok_or_else(|| missing("pretrain"))?.training.toggles = t;
        }
        if let Some(r) = o.resolution {
            self.head.as_mut().ok_or_else(|| missing("head"))?.resolution = Some(r);
        }
        if let Some(f) = o.fraction {
            self.fewshot.as_mut().ok_or_else(|| missing("fewshot"))?.fraction = f;
        }
        if let Some(l) = &o.layers {
            self.head.as_mut().ok_or_else(|| missing("head"))?.training.layers = Some(l.clone());
        }
        Ok(())
    }

    pub fn curate(&self) -> Result<&CurateSection> {
        self.curate.as_ref().ok_or_else(|| missing("curate"))
    }

    pub fn pretrain(&self) -> Result<&PretrainSection> {
        self.pretrain.as_ref().ok_or_else(|| missing("pretrain"))
    }

    pub fn head(&self) -> Result<&HeadSection> {
        self.head.as_ref().ok_or_else(|| missing("head"))
    }

    pub fn eval(&self) -> Result<&EvalSection> {
        self.eval.as_ref().ok_or_else(|| missing("eval"))
    }

    pub fn fewshot(&self) -> Result<&FewshotSection> {
        self.fewshot.as_ref().ok_or_else(|| missing("fewshot"))
    }

    pub fn gradcam(&self) -> Result<&GradcamSection> {
        self.gradcam.as_ref().ok_or_else(|| missing("gradcam"))
    }

    pub fn report(&self) -> Result<&ReportSection> {
        self.report.as_ref().ok_or_else(|| missing("report"))
    }

    /// Checks every present section without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let enc = self.model.encoder();
        enc.validate()?;
        if let Some(c) = &self.curate {
            if !(0.0..=1.0).contains(&c.threshold) {
                return Err(Error::config(format!("curate.threshold {} outside [0, 1]", c.threshold)));
            }
            if c.shards == 0 {
                return Err(Error::config("curate.shards must be positive"));
            }
        }
        if let Some(p) = &self.pretrain {
            p.training.validate()?;
            if let Some(r) = p.face_ratio {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::config(format!("pretrain.face_ratio {r} outside [0, 1]")));
                }
                if p.nonface_manifest.is_none() && r < 1.0 {
                    return Err(Error::config("pretrain.face_ratio below 1 needs pretrain.nonface_manifest"));
                }
            }
            if !(p.random_crop_min > 0.0 && p.random_crop_min <= 1.0) {
                return Err(Error::config("pretrain.random_crop_min must lie in (0, 1]"));
            }
        }
        if let Some(h) = &self.head {
            h.training.fusion.validate()?;
            if let Some(l) = &h.training.layers {
                l.check_depth(enc.image.depth)?;
            }
            if let Some(r) = h.resolution {
                if r == 0 || r % enc.image.patch_size != 0 {
                    return Err(Error::config(format!("resolution {r} is not a multiple of the patch size {}", enc.image.patch_size)));
                }
            }
            if h.training.batch_size == 0 || h.training.epochs == 0 {
                return Err(Error::config("head.training batch_size and epochs must be positive"));
            }
            validate_eval(&h.eval)?;
        }
        if let Some(e) = &self.eval {
            validate_eval(&e.metrics)?;
        }
        if let Some(f) = &self.fewshot {
            if !(f.fraction > 0.0 && f.fraction <= 1.0) {
                return Err(Error::config(format!("fewshot.fraction {} outside (0, 1]", f.fraction)));
            }
        }
        if let Some(g) = &self.gradcam {
            if g.queries.iter().any(|q| q.trim().is_empty()) || g.queries.is_empty() {
                return Err(Error::config("gradcam.queries must be non-empty strings"));
            }
        }
        Ok(())
    }
}

fn validate_eval(e: &EvalSettings) -> Result<()> {
    if !(e.failure_threshold > 0.0 && e.auc_threshold > 0.0) {
        return Err(Error::config("evaluation thresholds must be positive"));
    }
    Ok(())
}
