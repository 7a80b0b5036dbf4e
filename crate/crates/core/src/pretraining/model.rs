//! The dual-encoder model trained by the pre-training objectives.

use candle_core::Tensor;

use super::itc::TemperatureParam;
use super::masking::{masked_tokens, MaskPlacement, MaskSet, MaskToken};
use super::mim::MimHead;
use crate::encoders::{
    EncoderConfig, ImageEncoder, LayerFeatures, ProjectionHead, TextEncoder, TextTokenizer, TextTokens, Tower,
};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Parameter-name prefix of the image tower; everything under it is the
/// backbone handed to the downstream heads.
pub const BACKBONE_PREFIX: &str = "image.";

#[derive(Debug, Clone)]
pub struct DualEncoder {
    pub cfg: EncoderConfig,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub image_proj: ProjectionHead,
    pub text_proj: ProjectionHead,
    pub temperature: TemperatureParam,
    pub tokenizer: TextTokenizer,
}

impl DualEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let tokenizer = TextTokenizer::default();
        let image = ImageEncoder::new(store, "image", &cfg.image)?;
        let text = TextEncoder::new(store, "text", &cfg.text, tokenizer.vocab_size())?;
        let image_proj = ProjectionHead::new(
            store,
            "image_proj",
            Tower::Image,
            cfg.image.width,
            cfg.embed_dim,
            cfg.projection_depth,
        )?;
        let text_proj = ProjectionHead::new(
            store,
            "text_proj",
            Tower::Text,
            cfg.text.width,
            cfg.embed_dim,
            cfg.projection_depth,
        )?;
        let temperature = TemperatureParam::new(store, "log_sigma")?;
        Ok(Self {
            cfg: cfg.clone(),
            image,
            text,
            image_proj,
            text_proj,
            temperature,
            tokenizer,
        })
    }

    pub fn tokenize(&self, captions: &[String]) -> Vec<TextTokens> {
        captions.iter().map(|c| self.tokenizer.tokenize(c)).collect()
    }

    /// Unit-norm image embeddings `(B, E)` and the layer features behind them.
    pub fn embed_images(&self, images: &Tensor) -> Result<(Tensor, LayerFeatures)> {
        let feats = self.image.encode(images)?;
        let cls = self.image.cls_feature(feats.last())?;
        Ok((self.image_proj.project(&cls)?, feats))
    }

    /// Unit-norm text embeddings `(B, E)`.
    pub fn embed_texts(&self, tokens: &[TextTokens]) -> Result<Tensor> {
        let feats = self.text.encode(tokens)?;
        let eos = self.text.eos_features(&feats, tokens)?;
        self.text_proj.project(&eos)
    }

    /// Cosine similarity `e_I · e_T` for every image/text pair, `(B_I, B_T)`.
    pub fn similarity(&self, images: &Tensor, tokens: &[TextTokens]) -> Result<Tensor> {
        let (ei, _) = self.embed_images(images)?;
        let et = self.embed_texts(tokens)?;
        Ok(ei.matmul(&et.t()?)?)
    }
}

/// Masked-image-modeling branch: mask token plus prediction head.
#[derive(Debug, Clone)]
pub struct MimBranch {
    pub token: MaskToken,
    pub head: MimHead,
    pub placement: MaskPlacement,
}

impl MimBranch {
    pub fn new(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        depth: usize,
        vocab_size: usize,
        placement: MaskPlacement,
    ) -> Result<Self> {
        Ok(Self {
            token: MaskToken::new(store, "mim", cfg.image.width)?,
            head: MimHead::new(store, "mim.head", cfg.image.width, cfg.image.heads, depth, vocab_size)?,
            placement,
        })
    }

    /// Masked forward through the image tower followed by the head's loss.
    pub fn loss(
        &self,
        image: &ImageEncoder,
        images: &Tensor,
        masks: &[MaskSet],
        targets: &[Vec<u32>],
    ) -> Result<Tensor> {
        if masks.iter().any(|m| m.is_empty()) {
            return Err(Error::input("masked-image loss needs a non-empty mask"));
        }
        let seq = image.patchify(images)?;
        let tokens = masked_tokens(&seq, masks, &self.token, self.placement)?;
        let feats = image.forward_tokens(&tokens, image.depth())?;
        self.head.loss(feats.last(), masks, targets)
    }
}
