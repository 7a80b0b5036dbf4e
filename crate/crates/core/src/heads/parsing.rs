//! Per-pixel classification head for face parsing.

use candle_core::{DType, Tensor};

use super::features::MultiLevelFeatures;
use super::fusion::{FusionConfig, FusionTrunk};
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::nn::{join, resize_bilinear, Conv1x1};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct ParsingHead {
    trunk: FusionTrunk,
    classifier: Conv1x1,
    classes: usize,
}

impl ParsingHead {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, classes: usize, cfg: &FusionConfig) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("parsing needs at least two classes"));
        }
        let trunk = FusionTrunk::new(store, &join(prefix, "trunk"), in_dim, cfg)?;
        let classifier = Conv1x1::new(store, &join(prefix, "classifier"), trunk.width(), classes)?;
        Ok(Self { trunk, classifier, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(B, C, s, s)` logits at the input resolution `s`.
    pub fn forward(&self, feats: &MultiLevelFeatures, size: usize) -> Result<Tensor> {
        let fused = self.trunk.forward(feats)?;
        resize_bilinear(&self.classifier.forward(&fused)?, size, size)
    }
}

fn label_indices(labels: &[LabelMap], classes: usize, h: usize, w: usize, dev: &candle_core::Device) -> Result<Tensor> {
    let mut idx = Vec::with_capacity(labels.len() * h * w);
    for l in labels {
        if l.height() != h || l.width() != w {
            return Err(Error::dim(format!("label map {}×{} vs logits {h}×{w}", l.height(), l.width())));
        }
        if let Some(&bad) = l.labels().iter().find(|&&v| v as usize >= classes) {
            return Err(Error::input(format!("label {bad} outside {classes} classes")));
        }
        idx.extend(l.labels().iter().map(|&v| v as u32));
    }
    Ok(Tensor::from_vec(idx, (labels.len() * h * w, 1), dev)?)
}

/// Mean per-pixel cross-entropy over all pixels, background included.
pub fn pixel_cross_entropy(logits: &Tensor, labels: &[LabelMap]) -> Result<Tensor> {
    let (b, c, h, w) = logits.dims4()?;
    if labels.len() != b {
        return Err(Error::dim(format!("{} label maps for a batch of {b}", labels.len())));
    }
    let idx = label_indices(labels, c, h, w, logits.device())?;
    let logp = candle_nn::ops::log_softmax(logits, 1)?.permute((0, 2, 3, 1))?.reshape((b * h * w, c))?;
    let picked = logp.contiguous()?.gather(&idx, 1)?;
    Ok((picked.mean_all()? * -1.0)?)
}

/// Arg-max class per pixel.
pub fn predict_labels(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let (b, _, h, w) = logits.dims4()?;
    let am = logits.argmax(1)?.to_dtype(DType::U32)?;
    (0..b)
        .map(|i| {
            let v = am.get(i)?.flatten_all()?.to_vec1::<u32>()?;
            LabelMap::new(h, w, v.into_iter().map(|x| x as u8).collect())
        })
        .collect()
}

/// Fraction of pixels whose predicted class matches the label.
pub fn pixel_accuracy(pred: &[LabelMap], truth: &[LabelMap]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        hit += p.labels().iter().zip(t.labels()).filter(|(a, b)| a == b).count();
        total += t.labels().len();
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
