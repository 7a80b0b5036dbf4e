//! Multi-label attribute head over pooled multi-level features.

use candle_core::Tensor;

use super::features::MultiLevelFeatures;
use crate::error::{Error, Result};
use crate::nn::{join, LayerNorm, Linear};
use crate::params::ParamStore;

/// Vectors pooled per level: cls, token mean, token max.
pub const VECTORS_PER_LEVEL: usize = 3;

#[derive(Debug, Clone)]
pub struct AttributeHead {
    norms: Vec<LayerNorm>,
    weights: Tensor,
    classifier: Linear,
    levels: usize,
}

impl AttributeHead {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, levels: usize, attributes: usize) -> Result<Self> {
        let n = VECTORS_PER_LEVEL * levels;
        let norms = (0..n)
            .map(|i| LayerNorm::new(store, &join(prefix, &format!("ln.{i}")), in_dim))
            .collect::<Result<Vec<_>>>()?;
        let weights = store.constant(&join(prefix, "combine"), &[n], 1.0 / n as f64)?;
        let classifier = Linear::new(store, &join(prefix, "classifier"), in_dim, attributes, true)?;
        Ok(Self { norms, weights, classifier, levels })
    }

    pub fn attributes(&self) -> usize {
        self.classifier.out_dim()
    }

    /// The `3 · |K|` pooled vectors, each `(B, D)`, before normalisation.
    pub fn pooled(&self, feats: &MultiLevelFeatures) -> Result<Vec<Tensor>> {
        if feats.levels() != self.levels {
            return Err(Error::config(format!("head built for {} levels, got {}", self.levels, feats.levels())));
        }
        let mut out = Vec::with_capacity(VECTORS_PER_LEVEL * self.levels);
        for (cls, tokens) in feats.cls.iter().zip(&feats.tokens) {
            out.push(cls.clone());
            out.push(tokens.mean(1)?);
            out.push(tokens.max(1)?);
        }
        Ok(out)
    }

    /// `(B, A)` logits.
    pub fn forward(&self, feats: &MultiLevelFeatures) -> Result<Tensor> {
        let pooled = self.pooled(feats)?;
        let normed = pooled
            .iter()
            .zip(&self.norms)
            .map(|(v, ln)| ln.forward(v))
            .collect::<Result<Vec<_>>>()?;
        let stacked = Tensor::stack(&normed, 1)?;
        let w = self.weights.reshape((1, (), 1))?;
        let combined = stacked.broadcast_mul(&w)?.sum(1)?;
        self.classifier.forward(&combined)
    }
}

/// Mean binary cross-entropy with logits over every attribute and sample.
pub fn attribute_bce(logits: &Tensor, targets: &[Vec<bool>]) -> Result<Tensor> {
    let (b, a) = logits.dims2()?;
    if targets.len() != b || targets.iter().any(|t| t.len() != a) {
        return Err(Error::dim(format!("targets do not match {b}×{a} logits")));
    }
    let y: Vec<f64> = targets.iter().flatten().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let y = Tensor::from_vec(y, (b, a), logits.device())?.to_dtype(logits.dtype())?;
    // log(1 + e^x) − y·x, computed stably as max(x, 0) + log(1 + e^{−|x|}) − y·x
    let softplus = (logits.relu()? + ((logits.abs()? * -1.0)?.exp()? + 1.0)?.log()?)?;
    Ok((softplus - (y * logits)?)?.mean_all()?)
}

/// Thresholds logits at zero.
pub fn predict_attributes(logits: &Tensor) -> Result<Vec<Vec<bool>>> {
    let v = logits.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
    Ok(v.into_iter().map(|row| row.into_iter().map(|x| x > 0.0).collect()).collect())
}
