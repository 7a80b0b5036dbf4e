//! One optimisation step of the combined objective, plus its log records.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::PretrainBatch;
use super::itc::itc_loss;
use super::masking::{sample_mask, MaskPlacement, DEFAULT_MAX_MASKED};
use super::model::{DualEncoder, MimBranch};
use super::optim::{clip_grad_norm, GroupedAdamW, OptimizerConfig};
use super::schedule::{lr_at_step, ScheduleConfig};
use super::visual_tokenizer::{ColorGridTokenizer, VisualTokenizer};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::image::images_to_tensor;
use crate::params::ParamStore;

/// Objective switches, written like `ITC+MIM1+ALIGN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Toggles {
    /// Depth of the masked-image-modeling head; 0 disables the branch.
    pub mim_depth: usize,
    pub align: bool,
}

impl Toggles {
    pub const ITC: Self = Self { mim_depth: 0, align: false };

    pub fn uses_mim(&self) -> bool {
        self.mim_depth > 0
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Self { mim_depth: 1, align: true }
    }
}

impl fmt::Display for Toggles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ITC")?;
        if self.mim_depth > 0 {
            write!(f, "+MIM{}", self.mim_depth)?;
        }
        if self.align {
            write!(f, "+ALIGN")?;
        }
        Ok(())
    }
}

impl FromStr for Toggles {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut itc = false;
        let mut out = Toggles::ITC;
        for part in s.split('+').map(|p| p.trim().to_ascii_uppercase()) {
            match part.as_str() {
                "ITC" => itc = true,
                "ALIGN" => out.align = true,
                "MIM1" => out.mim_depth = 1,
                "MIM6" => out.mim_depth = 6,
                other => return Err(Error::config(format!("unknown toggle `{other}` (expected ITC, MIM1, MIM6, ALIGN)"))),
            }
        }
        if !itc {
            return Err(Error::config("toggles must include ITC"));
        }
        Ok(out)
    }
}

impl TryFrom<String> for Toggles {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Toggles> for String {
    fn from(t: Toggles) -> Self {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default = "default_mim_weight")]
    pub mim_weight: f64,
    /// Cap on masked patches; clipped to the patch count.
    #[serde(default = "default_max_masked")]
    pub max_masked: usize,
    #[serde(default)]
    pub mask_placement: MaskPlacement,
    #[serde(default = "default_bins")]
    pub tokenizer_bins: usize,
}

fn default_mim_weight() -> f64 {
    1.0
}
fn default_max_masked() -> usize {
    DEFAULT_MAX_MASKED
}
fn default_bins() -> usize {
    8
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            toggles: Toggles::default(),
            mim_weight: default_mim_weight(),
            max_masked: default_max_masked(),
            mask_placement: MaskPlacement::default(),
            tokenizer_bins: default_bins(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.mim_weight >= 0.0 && self.mim_weight.is_finite()) {
            return Err(Error::config("mim_weight must be finite and non-negative"));
        }
        if self.max_masked == 0 {
            return Err(Error::config("max_masked must be positive"));
        }
        if !matches!(self.toggles.mim_depth, 0 | 1 | 6) {
            return Err(Error::config("MIM head depth must be 1 or 6"));
        }
        ColorGridTokenizer::new(self.tokenizer_bins)?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub batch: u64,
    pub lr: f64,
    pub l_i: f64,
    pub l_t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_mim: Option<f64>,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub sigma: f64,
}

/// Appends loss records as newline-delimited JSON.
pub struct LossLog {
    out: BufWriter<File>,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn append(&mut self, rec: &LossRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io("training log", e))?;
        self.out.flush().map_err(|e| Error::io("training log", e))
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn tag_batch(e: Error, id: u64) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("batch {id}: {msg}")),
        other => other,
    }
}

/// Model, optimizer and schedule state for pre-training.
pub struct Pretrainer {
    pub store: ParamStore,
    pub model: DualEncoder,
    pub mim: Option<MimBranch>,
    cfg: PretrainConfig,
    tokenizer: ColorGridTokenizer,
    optimizer: GroupedAdamW,
    steps_per_epoch: usize,
    step: usize,
    rng: ChaCha8Rng,
}

impl Pretrainer {
    pub fn new(encoder: &EncoderConfig, cfg: PretrainConfig, seed: u64, steps_per_epoch: usize) -> Result<Self> {
        cfg.validate()?;
        if steps_per_epoch == 0 {
            return Err(Error::config("steps_per_epoch must be positive"));
        }
        let tokenizer = ColorGridTokenizer::new(cfg.tokenizer_bins)?;
        let mut store = ParamStore::new(DType::F64, seed);
        let model = DualEncoder::new(&mut store, encoder)?;
        let mim = if cfg.toggles.uses_mim() {
            Some(MimBranch::new(&mut store, encoder, cfg.toggles.mim_depth, tokenizer.vocab_size(), cfg.mask_placement)?)
        } else {
            None
        };
        let lr = lr_at_step(0, steps_per_epoch, &cfg.schedule);
        let optimizer = GroupedAdamW::new(store.all_vars(), lr, cfg.schedule.weight_decay, &cfg.optimizer)?;
        Ok(Self {
            store,
            model,
            mim,
            tokenizer,
            optimizer,
            steps_per_epoch,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_736b),
            cfg,
        })
    }

    pub fn config(&self) -> &PretrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Combined loss on a batch without updating anything.
    pub fn evaluate(&mut self, batch: &PretrainBatch) -> Result<f64> {
        let (total, _, _) = self.forward(batch)?;
        scalar(&total)
    }

    fn forward(&mut self, batch: &PretrainBatch) -> Result<(Tensor, super::itc::ItcLoss, Option<Tensor>)> {
        if batch.is_empty() || batch.images.len() != batch.captions.len() {
            return Err(Error::input(format!("batch {} needs equally many images and captions", batch.id)));
        }
        let images = images_to_tensor(&batch.images, self.store.dtype(), self.store.device())?;
        let tokens = self.model.tokenize(&batch.captions);
        let (ei, _) = self.model.embed_images(&images)?;
        let et = self.model.embed_texts(&tokens)?;
        let itc = itc_loss(&ei, &et, &self.model.temperature).map_err(|e| tag_batch(e, batch.id))?;
        let mut total = itc.total()?;
        let mut mim_loss = None;
        if let Some(branch) = &self.mim {
            let n = self.model.cfg.image.num_patches();
            let patch = self.model.cfg.image.patch_size;
            let cap = self.cfg.max_masked.min(n);
            let masks = (0..batch.len())
                .map(|_| sample_mask(n, cap, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let targets = batch
                .images
                .iter()
                .map(|im| self.tokenizer.tokenize(im, patch))
                .collect::<Result<Vec<_>>>()?;
            let l = branch.loss(&self.model.image, &images, &masks, &targets)?;
            total = (total + (&l * self.cfg.mim_weight)?)?;
            mim_loss = Some(l);
        }
        Ok((total, itc, mim_loss))
    }

    /// Forward, backward, clip and update on one batch.
    pub fn step(&mut self, batch: &PretrainBatch) -> Result<LossRecord> {
        let (total, itc, mim_loss) = self.forward(batch)?;
        let total_v = scalar(&total)?;
        if !total_v.is_finite() {
            return Err(Error::numerical(format!("non-finite loss {total_v} on batch {}", batch.id)));
        }
        let mut grads = total.backward()?;
        let gn = clip_grad_norm(&mut grads, self.optimizer.vars(), self.cfg.schedule.grad_clip_norm)
            .map_err(|e| tag_batch(e, batch.id))?;
        let lr = lr_at_step(self.step, self.steps_per_epoch, &self.cfg.schedule);
        self.optimizer.set_learning_rate(lr);
        self.optimizer.step(&grads)?;
        let rec = LossRecord {
            step: self.step,
            batch: batch.id,
            lr,
            l_i: scalar(&itc.image_to_text)?,
            l_t: scalar(&itc.text_to_image)?,
            l_mim: mim_loss.as_ref().map(scalar).transpose()?,
            total: total_v,
            grad_norm: gn,
            sigma: self.model.temperature.sigma()?,
        };
        self.step += 1;
        Ok(rec)
    }
}
