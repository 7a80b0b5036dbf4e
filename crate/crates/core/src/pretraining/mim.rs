//! Masked-image-modeling head and loss.

use candle_core::{Tensor, D};

use super::masking::MaskSet;
use crate::error::{Error, Result};
use crate::nn::{join, Block, LayerNorm, Linear};
use crate::params::ParamStore;

/// A small Transformer over the masked-image features followed by a
/// classifier over the visual vocabulary.
#[derive(Debug, Clone)]
pub struct MimHead {
    blocks: Vec<Block>,
    ln: LayerNorm,
    classifier: Linear,
}

impl MimHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        depth: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("masked-image head needs at least one block"));
        }
        let blocks = (0..depth)
            .map(|i| Block::new(store, &join(prefix, &format!("blocks.{i}")), width, heads, 4))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            ln: LayerNorm::new(store, &join(prefix, "ln"), width)?,
            classifier: Linear::with_std(store, &join(prefix, "classifier"), width, vocab_size, 0.02)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Patch logits `(B, N, |V|)` from last-layer features `(B, N + 1, D)`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut x = features.clone();
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let n = x.dims()[1] - 1;
        let patches = x.narrow(1, 1, n)?;
        self.classifier.forward(&self.ln.forward(&patches)?)
    }

    pub fn loss(&self, features: &Tensor, masks: &[MaskSet], targets: &[Vec<u32>]) -> Result<Tensor> {
        masked_token_nll(&self.logits(features)?, masks, targets)
    }
}

/// Negative log-likelihood of the target visual token at each masked
/// position, averaged over the positions of each sample and then over the
/// batch. Targets at unmasked positions never contribute.
pub fn masked_token_nll(logits: &Tensor, masks: &[MaskSet], targets: &[Vec<u32>]) -> Result<Tensor> {
    let (b, n, v) = logits.dims3()?;
    if masks.len() != b || targets.len() != b {
        return Err(Error::dim(format!(
            "batch {b} with {} masks and {} target rows",
            masks.len(),
            targets.len()
        )));
    }
    let mut weights = vec![0.0f64; b * n];
    let mut flat_targets = Vec::with_capacity(b * n);
    for (i, (mask, tgt)) in masks.iter().zip(targets).enumerate() {
        if mask.is_empty() {
            return Err(Error::input("masked-image loss needs a non-empty mask"));
        }
        if tgt.len() != n || mask.num_patches() != n {
            return Err(Error::dim(format!("expected {n} patch targets, got {}", tgt.len())));
        }
        if let Some(&bad) = tgt.iter().find(|&&t| t as usize >= v) {
            return Err(Error::input(format!("target token {bad} outside vocabulary of {v}")));
        }
        let w = 1.0 / (mask.len() as f64 * b as f64);
        for &p in mask.positions() {
            weights[i * n + p - 1] = w;
        }
        flat_targets.extend_from_slice(tgt);
    }
    let dev = logits.device();
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let idx = Tensor::from_vec(flat_targets, (b, n, 1), dev)?;
    let picked = log_probs.gather(&idx, D::Minus1)?.squeeze(D::Minus1)?;
    let weights = Tensor::from_vec(weights, (b, n), dev)?.to_dtype(logits.dtype())?;
    Ok((picked.mul(&weights)?.sum_all()? * -1.0)?)
}
