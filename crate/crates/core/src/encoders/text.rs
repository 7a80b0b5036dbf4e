use candle_core::{Tensor, D};

use super::tokenizer::{EOS, PAD};
use super::{LayerFeatures, TextConfig};
use crate::error::{Error, Result};
use crate::nn::{causal_mask, join, Block, LayerNorm};
use crate::params::ParamStore;

pub const CONTEXT_LENGTH: usize = 77;

/// A fixed-length token sequence with its end-of-sequence index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTokens {
    ids: Vec<u32>,
    eos_position: usize,
}

impl TextTokens {
    pub fn new(ids: Vec<u32>, eos_position: usize) -> Result<Self> {
        if ids.len() != CONTEXT_LENGTH {
            return Err(Error::input(format!("expected {CONTEXT_LENGTH} tokens, got {}", ids.len())));
        }
        if eos_position >= CONTEXT_LENGTH {
            return Err(Error::input(format!("eos position {eos_position} out of range")));
        }
        if ids[eos_position] != EOS {
            return Err(Error::input(format!("token at eos position {eos_position} is not eos")));
        }
        Ok(Self { ids, eos_position })
    }

    /// Like [`TextTokens::new`] but also requires pure padding after eos.
    pub fn new_strict(ids: Vec<u32>, eos_position: usize) -> Result<Self> {
        let t = Self::new(ids, eos_position)?;
        if t.ids[eos_position + 1..].iter().any(|&i| i != PAD) {
            return Err(Error::input("non-padding token after eos"));
        }
        Ok(t)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn eos_position(&self) -> usize {
        self.eos_position
    }
}

/// Causal Transformer over token embeddings; the sequence feature is read
/// at the eos position after a final normalisation.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: TextConfig,
    vocab_size: usize,
    token_embedding: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    mask: Tensor,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &TextConfig, vocab_size: usize) -> Result<Self> {
        let d = cfg.width;
        let token_embedding = store.normal(&join(prefix, "token_embedding"), &[vocab_size, d], 0.02)?;
        let pos = store.normal(&join(prefix, "pos"), &[cfg.context_length, d], 0.01)?;
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &join(prefix, &format!("blocks.{i}")), d, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let ln_final = LayerNorm::new(store, &join(prefix, "ln_final"), d)?;
        let mask = causal_mask(cfg.context_length, store.dtype(), store.device())?;
        Ok(Self {
            cfg: cfg.clone(),
            vocab_size,
            token_embedding,
            pos,
            blocks,
            ln_final,
            mask,
        })
    }

    pub fn config(&self) -> &TextConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn embed(&self, batch: &[TextTokens]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::input("empty text batch"));
        }
        let mut flat = Vec::with_capacity(batch.len() * CONTEXT_LENGTH);
        for t in batch {
            if let Some(&bad) = t.ids.iter().find(|&&id| id as usize >= self.vocab_size) {
                return Err(Error::input(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
            }
            flat.extend_from_slice(&t.ids);
        }
        let ids = Tensor::from_vec(flat, batch.len() * CONTEXT_LENGTH, self.token_embedding.device())?;
        let x = self
            .token_embedding
            .index_select(&ids, 0)?
            .reshape((batch.len(), CONTEXT_LENGTH, self.cfg.width))?;
        Ok(x.broadcast_add(&self.pos)?)
    }

    /// All block outputs, `(B, 77, D)` each.
    pub fn encode(&self, batch: &[TextTokens]) -> Result<LayerFeatures> {
        let mut x = self.embed(batch)?;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(&x, Some(&self.mask))?;
            layers.push(x.clone());
        }
        Ok(LayerFeatures::new(layers))
    }

    /// Final-normalised eos features `(B, D)`.
    pub fn eos_features(&self, feats: &LayerFeatures, batch: &[TextTokens]) -> Result<Tensor> {
        let last = feats.last();
        let (b, t, d) = last.dims3()?;
        if b != batch.len() {
            return Err(Error::dim("feature batch does not match token batch"));
        }
        let idx: Vec<u32> = batch
            .iter()
            .enumerate()
            .map(|(i, tok)| (i * t + tok.eos_position) as u32)
            .collect();
        let idx = Tensor::from_vec(idx, b, last.device())?;
        let picked = last.reshape((b * t, d))?.index_select(&idx, 0)?;
        debug_assert_eq!(picked.dim(D::Minus1)?, d);
        self.ln_final.forward(&picked)
    }
}
