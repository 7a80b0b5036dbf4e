//! Symmetric image-text contrastive loss.

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const INITIAL_TEMPERATURE: f64 = 0.07;

/// Learnable softmax temperature, stored as its logarithm so it stays positive.
#[derive(Debug, Clone)]
pub struct TemperatureParam {
    log_sigma: Tensor,
}

impl TemperatureParam {
    pub fn new(store: &mut ParamStore, name: &str) -> Result<Self> {
        Self::with_value(store, name, INITIAL_TEMPERATURE)
    }

    pub fn with_value(store: &mut ParamStore, name: &str, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::input("temperature must be positive"));
        }
        Ok(Self {
            log_sigma: store.constant(name, &[], sigma.ln())?,
        })
    }

    pub fn from_tensor(log_sigma: Tensor) -> Self {
        Self { log_sigma }
    }

    pub fn log_sigma(&self) -> &Tensor {
        &self.log_sigma
    }

    pub fn sigma(&self) -> Result<f64> {
        Ok(self.log_sigma.to_dtype(DType::F64)?.to_scalar::<f64>()?.exp())
    }
}

/// Per-direction losses; the training objective is their mean.
#[derive(Debug, Clone)]
pub struct ItcLoss {
    pub image_to_text: Tensor,
    pub text_to_image: Tensor,
}

impl ItcLoss {
    pub fn total(&self) -> Result<Tensor> {
        Ok(((&self.image_to_text + &self.text_to_image)? * 0.5)?)
    }
}

const NORM_TOLERANCE: f64 = 1e-3;

/// Mean cross-entropy of each row against the diagonal target.
fn diagonal_nll(logits: &Tensor) -> Result<Tensor> {
    let b = logits.dims()[0];
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let eye = Tensor::eye(b, logits.dtype(), logits.device())?;
    Ok((log_probs.mul(&eye)?.sum_all()? * (-1.0 / b as f64))?)
}

/// Contrastive loss over a full logical batch of unit-norm embeddings.
///
/// Data-parallel callers must gather every worker's embeddings first so the
/// similarity matrix covers the whole batch.
pub fn itc_loss(image_embs: &Tensor, text_embs: &Tensor, temperature: &TemperatureParam) -> Result<ItcLoss> {
    let (b, e) = image_embs.dims2()?;
    let (bt, et) = text_embs.dims2()?;
    if b == 0 {
        return Err(Error::input("contrastive loss needs at least one pair"));
    }
    if b != bt || e != et {
        return Err(Error::dim(format!("image batch {b}×{e} vs text batch {bt}×{et}")));
    }
    for (which, t) in [("image", image_embs), ("text", text_embs)] {
        let norms = t.to_dtype(DType::F64)?.sqr()?.sum(D::Minus1)?.sqrt()?.to_vec1::<f64>()?;
        if let Some(n) = norms.iter().find(|n| (*n - 1.0).abs() > NORM_TOLERANCE) {
            return Err(Error::input(format!("{which} embedding has norm {n}, expected unit norm")));
        }
    }
    let inv_sigma = temperature.log_sigma.neg()?.exp()?;
    let logits = image_embs.matmul(&text_embs.t()?)?.broadcast_mul(&inv_sigma)?;
    let check = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if check.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite contrastive logits"));
    }
    Ok(ItcLoss {
        image_to_text: diagonal_nll(&logits)?,
        text_to_image: diagonal_nll(&logits.t()?.contiguous()?)?,
    })
}
