//! Image and text Transformer towers and their projection heads.

mod pos_embed;
mod projection;
mod text;
mod tokenizer;
mod vision;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pos_embed::{bicubic_resize_grid, interpolate_pos_embeddings};
pub use projection::{l2_normalize_rows, ProjectionHead, Tower};
pub use text::{TextEncoder, TextTokens, CONTEXT_LENGTH};
pub use tokenizer::{TextTokenizer, BOS, EOS, PAD};
pub use vision::{HookedForward, ImageEncoder, PatchSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl VisionConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    pub context_length: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image: VisionConfig,
    pub text: TextConfig,
    /// Shared output dimension of both projection heads.
    pub embed_dim: usize,
    /// Number of linear layers in each projection head (GELU between them).
    #[serde(default = "default_projection_depth")]
    pub projection_depth: usize,
}

fn default_projection_depth() -> usize {
    1
}

impl EncoderConfig {
    /// ViT-B/16 image tower and the 12-layer 512-wide text tower.
    pub fn base() -> Self {
        Self {
            image: VisionConfig {
                image_size: 224,
                patch_size: 16,
                width: 768,
                depth: 12,
                heads: 12,
                mlp_ratio: 4,
            },
            text: TextConfig {
                context_length: CONTEXT_LENGTH,
                width: 512,
                depth: 12,
                heads: 8,
                mlp_ratio: 4,
            },
            embed_dim: 512,
            projection_depth: 1,
        }
    }

    /// Two layers, width 64, 32×32 inputs: small enough for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            image: VisionConfig {
                image_size: 32,
                patch_size: 16,
                width: 64,
                depth: 2,
                heads: 4,
                mlp_ratio: 4,
            },
            text: TextConfig {
                context_length: CONTEXT_LENGTH,
                width: 64,
                depth: 2,
                heads: 4,
                mlp_ratio: 4,
            },
            embed_dim: 32,
            projection_depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.image;
        if v.patch_size == 0 || v.image_size % v.patch_size != 0 {
            return Err(Error::config(format!(
                "image_size {} not divisible by patch_size {}",
                v.image_size, v.patch_size
            )));
        }
        if v.depth == 0 || self.text.depth == 0 {
            return Err(Error::config("encoder depth must be positive"));
        }
        if v.heads == 0 || v.width % v.heads != 0 {
            return Err(Error::config("image width must be divisible by heads"));
        }
        if self.text.heads == 0 || self.text.width % self.text.heads != 0 {
            return Err(Error::config("text width must be divisible by heads"));
        }
        if self.text.context_length != CONTEXT_LENGTH {
            return Err(Error::config(format!("text context length must be {CONTEXT_LENGTH}")));
        }
        if self.embed_dim == 0 || self.projection_depth == 0 {
            return Err(Error::config("embed_dim and projection_depth must be positive"));
        }
        Ok(())
    }
}

/// Per-layer token features `(B, T, D)`; index 0 along `T` is the cls token
/// for images. Layers are numbered from 1.
#[derive(Debug, Clone)]
pub struct LayerFeatures {
    layers: Vec<Tensor>,
}

impl LayerFeatures {
    pub(crate) fn new(layers: Vec<Tensor>) -> Self {
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Output of block `k` (1-based).
    pub fn layer(&self, k: usize) -> Result<&Tensor> {
        if k == 0 || k > self.layers.len() {
            return Err(Error::input(format!("layer {k} outside 1..={}", self.layers.len())));
        }
        Ok(&self.layers[k - 1])
    }

    pub fn last(&self) -> &Tensor {
        self.layers.last().expect("at least one layer")
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn detach(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|t| t.detach()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        EncoderConfig::base().validate().unwrap();
        EncoderConfig::miniature().validate().unwrap();
        assert_eq!(EncoderConfig::base().image.num_patches(), 196);
    }

    #[test]
    fn bad_patch_size_rejected() {
        let mut c = EncoderConfig::miniature();
        c.image.image_size = 40;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = EncoderConfig::base();
        let s = toml::to_string(&c).unwrap();
        let back: EncoderConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
