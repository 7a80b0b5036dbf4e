//! Head training on top of a frozen (probing) or trainable (fine-tuning)
//! image backbone.

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::alignment::{decode_landmarks, rescale_point, soft_label_ce, AlignmentHead};
use super::attributes::{attribute_bce, predict_attributes, AttributeHead};
use super::features::{LayerSelection, MultiLevelFeatures, NUM_LEVELS};
use super::fusion::FusionConfig;
use super::parsing::{pixel_cross_entropy, predict_labels, ParsingHead};
use crate::encoders::{ImageEncoder, VisionConfig};
use crate::error::{Error, Result};
use crate::geometry::{render_heatmap, DecodedLandmark, Point, HEATMAP_SIZE};
use crate::image::{images_to_tensor, ImageTensor, LabelMap};
use crate::params::ParamStore;
use crate::pretraining::{GroupedAdamW, OptimizerConfig, BACKBONE_PREFIX};

pub const HEAD_PREFIX: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Backbone frozen; only head parameters are optimised.
    Probe,
    /// Backbone and head optimised together.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Parsing { classes: usize },
    Alignment {
        landmarks: usize,
        #[serde(default = "default_heatmap_size")]
        heatmap_size: usize,
    },
    Attributes { count: usize },
}

fn default_heatmap_size() -> usize {
    HEATMAP_SIZE
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Parsing { .. } => "parsing",
            TaskSpec::Alignment { .. } => "alignment",
            TaskSpec::Attributes { .. } => "attributes",
        }
    }

    /// Learning rate and weight decay used when the config leaves them unset.
    pub fn default_optim(&self) -> (f64, f64) {
        match self {
            TaskSpec::Parsing { .. } => (1e-3, 1e-5),
            TaskSpec::Alignment { .. } => (1e-2, 1e-5),
            TaskSpec::Attributes { .. } => (0.3, 1e-5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default)]
    pub fusion: FusionConfig,
    /// Defaults to the selection matching the backbone depth.
    #[serde(default)]
    pub layers: Option<LayerSelection>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    8
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            layers: None,
            lr: None,
            weight_decay: None,
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Cosine decay from `peak` to zero over `total` steps.
pub fn cosine_to_zero(step: usize, total: usize, peak: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    0.5 * peak * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Debug, Clone)]
pub enum DownstreamHead {
    Parsing(ParsingHead),
    Alignment(AlignmentHead),
    Attributes(AttributeHead),
}

/// Supervision for one batch, in the input image frame.
#[derive(Debug, Clone, Copy)]
pub enum TaskTargets<'a> {
    Parsing(&'a [LabelMap]),
    Alignment(&'a [Vec<Point>]),
    Attributes(&'a [Vec<bool>]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Parsing(Vec<LabelMap>),
    /// Landmarks in the input image frame.
    Alignment(Vec<Vec<DecodedLandmark>>),
    Attributes(Vec<Vec<bool>>),
}

pub struct HeadTrainer {
    pub store: ParamStore,
    pub backbone: ImageEncoder,
    pub head: DownstreamHead,
    pub layers: LayerSelection,
    pub mode: TrainMode,
    pub task: TaskSpec,
    cfg: HeadConfig,
    optimizer: GroupedAdamW,
    total_steps: usize,
    step: usize,
}

impl HeadTrainer {
    pub fn new(vision: &VisionConfig, task: TaskSpec, cfg: HeadConfig, mode: TrainMode, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(DType::F64, seed);
        let backbone = ImageEncoder::new(&mut store, BACKBONE_PREFIX.trim_end_matches('.'), vision)?;
        let layers = cfg.layers.clone().unwrap_or_else(|| LayerSelection::for_depth(vision.depth));
        layers.check_depth(vision.depth)?;
        let head = match &task {
            TaskSpec::Parsing { classes } => {
                DownstreamHead::Parsing(ParsingHead::new(&mut store, HEAD_PREFIX, vision.width, *classes, &cfg.fusion)?)
            }
            TaskSpec::Alignment { landmarks, heatmap_size } => DownstreamHead::Alignment(AlignmentHead::new(
                &mut store,
                HEAD_PREFIX,
                vision.width,
                *landmarks,
                *heatmap_size,
                &cfg.fusion,
            )?),
            TaskSpec::Attributes { count } => {
                DownstreamHead::Attributes(AttributeHead::new(&mut store, HEAD_PREFIX, vision.width, NUM_LEVELS, *count)?)
            }
        };
        let optimizer = Self::build_optimizer(&store, mode, &task, &cfg)?;
        Ok(Self { store, backbone, head, layers, mode, task, cfg, optimizer, total_steps: 0, step: 0 })
    }

    fn build_optimizer(store: &ParamStore, mode: TrainMode, task: &TaskSpec, cfg: &HeadConfig) -> Result<GroupedAdamW> {
        let (lr, wd) = task.default_optim();
        let vars = match mode {
            TrainMode::Probe => store.vars_with_prefix(&format!("{HEAD_PREFIX}.")),
            TrainMode::Finetune => store.all_vars(),
        };
        GroupedAdamW::new(vars, cfg.lr.unwrap_or(lr), cfg.weight_decay.unwrap_or(wd), &cfg.optimizer)
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    pub fn image_size(&self) -> usize {
        self.backbone.config().image_size
    }

    pub fn peak_lr(&self) -> f64 {
        self.cfg.lr.unwrap_or(self.task.default_optim().0)
    }

    /// Sets the horizon of the cosine schedule; zero keeps the rate constant.
    pub fn set_total_steps(&mut self, total: usize) {
        self.total_steps = total;
    }

    /// Loads backbone weights from a pre-training checkpoint.
    pub fn load_backbone(&mut self, path: &Path) -> Result<()> {
        self.store.load_prefixed(path, BACKBONE_PREFIX)?;
        Ok(())
    }

    /// Switches the backbone to a new input resolution by resampling its
    /// positional table.
    pub fn regrid(&mut self, image_size: usize) -> Result<()> {
        self.backbone.regrid(&mut self.store, image_size)?;
        self.optimizer = Self::build_optimizer(&self.store, self.mode, &self.task, &self.cfg)?;
        Ok(())
    }

    pub fn backbone_hash(&self) -> Result<String> {
        self.store.content_hash(BACKBONE_PREFIX)
    }

    fn images(&self, images: &[ImageTensor]) -> Result<Tensor> {
        let s = self.image_size();
        if let Some(im) = images.iter().find(|im| im.height() != s || im.width() != s) {
            return Err(Error::dim(format!("image {}×{} but the backbone expects {s}×{s}", im.height(), im.width())));
        }
        images_to_tensor(images, self.store.dtype(), self.store.device())
    }

    pub fn features(&self, images: &[ImageTensor]) -> Result<MultiLevelFeatures> {
        let x = self.images(images)?;
        let feats = self.backbone.encode_to_depth(&x, self.layers.deepest())?;
        let ml = MultiLevelFeatures::select(&feats, &self.layers)?;
        Ok(match self.mode {
            TrainMode::Probe => ml.detach(),
            TrainMode::Finetune => ml,
        })
    }

    /// Raw head output: parsing `(B, C, s, s)`, alignment `(B, L, h, h)`,
    /// attributes `(B, A)`.
    pub fn logits(&self, feats: &MultiLevelFeatures) -> Result<Tensor> {
        match &self.head {
            DownstreamHead::Parsing(h) => h.forward(feats, self.image_size()),
            DownstreamHead::Alignment(h) => h.forward(feats),
            DownstreamHead::Attributes(h) => h.forward(feats),
        }
    }

    pub fn loss(&self, logits: &Tensor, targets: TaskTargets<'_>) -> Result<Tensor> {
        match (&self.head, targets) {
            (DownstreamHead::Parsing(_), TaskTargets::Parsing(labels)) => pixel_cross_entropy(logits, labels),
            (DownstreamHead::Alignment(h), TaskTargets::Alignment(points)) => {
                let hm = h.heatmap_size();
                let s = self.image_size();
                let maps: Vec<_> = points
                    .iter()
                    .map(|pts| {
                        let scaled: Vec<Point> = pts.iter().map(|&p| rescale_point(p, s, hm)).collect();
                        render_heatmap(&scaled, hm)
                    })
                    .collect();
                Ok(soft_label_ce(logits, &maps)?.loss)
            }
            (DownstreamHead::Attributes(_), TaskTargets::Attributes(labels)) => attribute_bce(logits, labels),
            _ => Err(Error::input("targets do not match the head's task")),
        }
    }

    /// One optimisation step; returns the loss before the update.
    pub fn step(&mut self, images: &[ImageTensor], targets: TaskTargets<'_>) -> Result<f64> {
        let feats = self.features(images)?;
        let logits = self.logits(&feats)?;
        let loss = self.loss(&logits, targets)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::numerical(format!("non-finite {} loss at step {}", self.task.name(), self.step)));
        }
        let grads = loss.backward()?;
        let lr = if self.total_steps == 0 {
            self.peak_lr()
        } else {
            cosine_to_zero(self.step, self.total_steps, self.peak_lr())
        };
        self.optimizer.set_learning_rate(lr);
        self.optimizer.step(&grads)?;
        self.step += 1;
        Ok(value)
    }

    pub fn predict(&self, images: &[ImageTensor]) -> Result<Prediction> {
        let feats = self.features(images)?.detach();
        let logits = self.logits(&feats)?;
        Ok(match &self.head {
            DownstreamHead::Parsing(_) => Prediction::Parsing(predict_labels(&logits)?),
            DownstreamHead::Alignment(_) => Prediction::Alignment(decode_landmarks(&logits, self.image_size())?),
            DownstreamHead::Attributes(_) => Prediction::Attributes(predict_attributes(&logits)?),
        })
    }

    pub fn save(&self, path: &Path, metadata: &std::collections::BTreeMap<String, String>) -> Result<()> {
        self.store.save(path, metadata)
    }
}
