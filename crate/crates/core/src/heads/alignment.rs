//! Heatmap regression head for face alignment and its soft-label loss.

use candle_core::{Tensor, D};

use super::features::MultiLevelFeatures;
use super::fusion::{FusionConfig, FusionTrunk};
use crate::error::{Error, Result};
use crate::geometry::{decode_logits, DecodedLandmark, Heatmap, Point};
use crate::nn::{join, resize_bilinear, Conv1x1};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AlignmentHead {
    trunk: FusionTrunk,
    out: Conv1x1,
    landmarks: usize,
    heatmap_size: usize,
}

impl AlignmentHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        landmarks: usize,
        heatmap_size: usize,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        if landmarks == 0 || heatmap_size == 0 {
            return Err(Error::config("alignment head needs landmarks and a heatmap size"));
        }
        let trunk = FusionTrunk::new(store, &join(prefix, "trunk"), in_dim, cfg)?;
        let out = Conv1x1::new(store, &join(prefix, "out"), trunk.width(), landmarks)?;
        Ok(Self { trunk, out, landmarks, heatmap_size })
    }

    pub fn landmarks(&self) -> usize {
        self.landmarks
    }

    pub fn heatmap_size(&self) -> usize {
        self.heatmap_size
    }

    /// `(B, L, h, h)` heatmap logits.
    pub fn forward(&self, feats: &MultiLevelFeatures) -> Result<Tensor> {
        let fused = self.trunk.forward(feats)?;
        resize_bilinear(&self.out.forward(&fused)?, self.heatmap_size, self.heatmap_size)
    }
}

/// Maps a point between square frames of different sizes, pixel centres at
/// integer coordinates.
pub fn rescale_point(p: Point, from: usize, to: usize) -> Point {
    let k = to as f64 / from as f64;
    [(p[0] + 0.5) * k - 0.5, (p[1] + 0.5) * k - 0.5]
}

#[derive(Debug, Clone)]
pub struct SoftLabelLoss {
    pub loss: Tensor,
    /// Channels excluded because their target summed to zero.
    pub skipped: usize,
}

/// Cross-entropy between each channel's spatial softmax and its target
/// normalised to sum 1, averaged over channels with a non-zero target.
pub fn soft_label_ce(logits: &Tensor, targets: &[Heatmap]) -> Result<SoftLabelLoss> {
    let (b, l, h, w) = logits.dims4()?;
    if targets.len() != b {
        return Err(Error::dim(format!("{} targets for a batch of {b}", targets.len())));
    }
    let n = h * w;
    let mut weights = Vec::with_capacity(b * l * n);
    let mut skipped = 0;
    for t in targets {
        if t.channels() != l || t.size() != h || h != w {
            return Err(Error::dim(format!(
                "target {}×{}² vs logits {l}×{h}×{w}",
                t.channels(),
                t.size()
            )));
        }
        for c in 0..l {
            let ch = t.channel(c);
            let sum: f64 = ch.iter().sum();
            if sum > 0.0 {
                weights.extend(ch.iter().map(|v| v / sum));
            } else {
                skipped += 1;
                weights.extend(std::iter::repeat_n(0.0, n));
            }
        }
    }
    let valid = b * l - skipped;
    if skipped > 0 {
        tracing::warn!(skipped, "all-zero heatmap channels excluded from the loss");
    }
    if valid == 0 {
        return Err(Error::input("every target channel is all zero"));
    }
    let target = Tensor::from_vec(weights, (b, l, n), logits.device())?.to_dtype(logits.dtype())?;
    let logp = candle_nn::ops::log_softmax(&logits.reshape((b, l, n))?, D::Minus1)?;
    let loss = ((target * logp)?.sum_all()? * (-1.0 / valid as f64))?;
    Ok(SoftLabelLoss { loss, skipped })
}

/// Decodes `(B, L, h, h)` logits into landmarks in an `image_size` frame.
pub fn decode_landmarks(logits: &Tensor, image_size: usize) -> Result<Vec<Vec<DecodedLandmark>>> {
    let (b, l, h, _) = logits.dims4()?;
    let flat = logits.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let per = l * h * h;
    (0..b)
        .map(|i| {
            let dec = decode_logits(&flat[i * per..(i + 1) * per], l, h)?;
            Ok(dec
                .into_iter()
                .map(|d| DecodedLandmark { point: rescale_point(d.point, h, image_size), degenerate: d.degenerate })
                .collect())
        })
        .collect()
}
