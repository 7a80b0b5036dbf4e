use candle_core::{Tensor, Var};

use super::pos_embed::interpolate_pos_embeddings;
use super::{LayerFeatures, VisionConfig};
use crate::error::{Error, Result};
use crate::nn::{join, Block, LayerNorm, Linear};
use crate::params::ParamStore;

/// Patch embeddings plus the pieces needed to assemble the token sequence.
///
/// Kept unassembled so masking can substitute patch embeddings before the
/// positional table is added.
#[derive(Debug, Clone)]
pub struct PatchSequence {
    /// `(B, N, D)` linear patch embeddings.
    pub patches: Tensor,
    /// `(D,)` learnable class token.
    pub cls: Tensor,
    /// `(N + 1, D)` positional table, row 0 for cls.
    pub pos: Tensor,
}

impl PatchSequence {
    pub fn num_patches(&self) -> usize {
        self.patches.dims()[1]
    }

    /// Sequence length including cls.
    pub fn len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn batch(&self) -> usize {
        self.patches.dims()[0]
    }

    /// `(B, N + 1, D)`: cls prepended, positional embeddings added.
    pub fn tokens(&self) -> Result<Tensor> {
        let (b, _, d) = self.patches.dims3()?;
        let cls = self.cls.reshape((1, 1, d))?.broadcast_as((b, 1, d))?;
        let x = Tensor::cat(&[&cls, &self.patches], 1)?;
        Ok(x.broadcast_add(&self.pos)?)
    }
}

/// Activation tapped at the first normalisation of the final block.
#[derive(Debug)]
pub struct HookedForward {
    /// `ln1` output of the last block, as a leaf so gradients can be read.
    pub activation: Var,
    /// Residual stream entering the last block (detached).
    pub residual: Tensor,
    /// Output of the last block computed from `activation`.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    cfg: VisionConfig,
    prefix: String,
    patch_embed: Linear,
    cls: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    ln_post: LayerNorm,
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &VisionConfig) -> Result<Self> {
        let d = cfg.width;
        let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
        let patch_embed = Linear::new(store, &join(prefix, "patch_embed"), patch_dim, d, true)?;
        let cls = store.normal(&join(prefix, "cls"), &[d], 0.02)?;
        let pos = store.normal(&join(prefix, "pos"), &[cfg.num_patches() + 1, d], 0.02)?;
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(store, &join(prefix, &format!("blocks.{i}")), d, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let ln_post = LayerNorm::new(store, &join(prefix, "ln_post"), d)?;
        Ok(Self {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            patch_embed,
            cls,
            pos,
            blocks,
            ln_post,
        })
    }

    pub fn config(&self) -> &VisionConfig {
        &self.cfg
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    pub fn positional(&self) -> &Tensor {
        &self.pos
    }

    /// Splits `(B, 3, H, W)` images into patches and embeds them.
    pub fn patchify(&self, images: &Tensor) -> Result<PatchSequence> {
        let (b, c, h, w) = images.dims4()?;
        let p = self.cfg.patch_size;
        if c != 3 {
            return Err(Error::dim(format!("expected 3 channels, got {c}")));
        }
        if h % p != 0 || w % p != 0 {
            return Err(Error::dim(format!("image {h}×{w} not divisible by patch size {p}")));
        }
        let (gh, gw) = (h / p, w / p);
        if gh * gw + 1 != self.pos.dims()[0] {
            return Err(Error::dim(format!(
                "image {h}×{w} gives {} tokens but the positional table holds {}; re-grid it first",
                gh * gw + 1,
                self.pos.dims()[0]
            )));
        }
        let patches = images
            .reshape((b, c, gh, p, gw, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, gh * gw, c * p * p))?;
        let patches = self.patch_embed.forward(&patches)?;
        Ok(PatchSequence {
            patches,
            cls: self.cls.clone(),
            pos: self.pos.clone(),
        })
    }

    /// Runs the first `depth` blocks over an assembled `(B, T, D)` sequence.
    pub fn forward_tokens(&self, tokens: &Tensor, depth: usize) -> Result<LayerFeatures> {
        if depth == 0 || depth > self.blocks.len() {
            return Err(Error::input(format!("depth {depth} outside 1..={}", self.blocks.len())));
        }
        let mut x = tokens.clone();
        let mut layers = Vec::with_capacity(depth);
        for block in &self.blocks[..depth] {
            x = block.forward(&x, None)?;
            layers.push(x.clone());
        }
        debug_assert!(layers.iter().all(|l| l.dims() == tokens.dims()));
        Ok(LayerFeatures::new(layers))
    }

    pub fn encode(&self, images: &Tensor) -> Result<LayerFeatures> {
        self.encode_to_depth(images, self.blocks.len())
    }

    pub fn encode_to_depth(&self, images: &Tensor, depth: usize) -> Result<LayerFeatures> {
        let seq = self.patchify(images)?;
        self.forward_tokens(&seq.tokens()?, depth)
    }

    /// Final-normalised cls feature of a last-layer tensor, `(B, D)`.
    pub fn cls_feature(&self, last: &Tensor) -> Result<Tensor> {
        let cls = last.narrow(1, 0, 1)?.squeeze(1)?;
        self.ln_post.forward(&cls)
    }

    /// Forward pass that exposes the first normalisation output of the final
    /// block as a differentiable leaf.
    pub fn forward_hooked(&self, images: &Tensor) -> Result<HookedForward> {
        let seq = self.patchify(images)?;
        let mut x = seq.tokens()?;
        let (last, rest) = self.blocks.split_last().expect("depth >= 1");
        for block in rest {
            x = block.forward(&x, None)?;
        }
        let residual = x.detach();
        let activation = Var::from_tensor(&last.ln1.forward(&residual)?.detach())?;
        let output = last.forward_from_normed(&residual, activation.as_tensor(), None)?;
        Ok(HookedForward {
            activation,
            residual,
            output,
        })
    }

    /// Recomputes the last block from a (possibly perturbed) hook activation.
    pub fn hook_tail(&self, residual: &Tensor, activation: &Tensor) -> Result<Tensor> {
        let last = self.blocks.last().expect("depth >= 1");
        last.forward_from_normed(residual, activation, None)
    }

    /// `ln1` of the final block applied to a residual stream.
    pub fn final_block_norm(&self, residual: &Tensor) -> Result<Tensor> {
        self.blocks.last().expect("depth >= 1").ln1.forward(residual)
    }

    /// Resamples the positional table for a new input resolution and swaps it
    /// into the parameter store.
    pub fn regrid(&mut self, store: &mut ParamStore, image_size: usize) -> Result<()> {
        if image_size % self.cfg.patch_size != 0 {
            return Err(Error::dim(format!(
                "image size {image_size} not divisible by patch size {}",
                self.cfg.patch_size
            )));
        }
        let grid = image_size / self.cfg.patch_size;
        let resized = interpolate_pos_embeddings(&self.pos, grid)?;
        self.pos = store.replace(&join(&self.prefix, "pos"), &resized)?;
        self.cfg.image_size = image_size;
        Ok(())
    }
}
