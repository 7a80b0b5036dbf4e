//! Pyramid fusion trunk shared by the parsing and alignment heads.
//!
//! The four selected levels are first resampled to strides 4, 8, 16 and 32
//! relative to the input (two, one and zero stride-2 transposed convolutions,
//! then a 2×2 max-pool). A pooled-context module summarises the coarsest
//! level, lateral 1×1 projections are merged top-down, and the refined maps
//! are concatenated at the finest resolution and fused by a 3×3 convolution.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::features::{MultiLevelFeatures, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::nn::{adaptive_avg_pool, gelu, join, max_pool2, resize_bilinear, Conv1x1, Conv3x3, Upsample2};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_pool_scales")]
    pub pool_scales: Vec<usize>,
}

fn default_width() -> usize {
    256
}
fn default_pool_scales() -> Vec<usize> {
    vec![1, 2, 3, 6]
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { width: default_width(), pool_scales: default_pool_scales() }
    }
}

impl FusionConfig {
    pub fn miniature() -> Self {
        Self { width: 16, pool_scales: vec![1, 2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("fusion width must be positive"));
        }
        if self.pool_scales.is_empty() || self.pool_scales.contains(&0) {
            return Err(Error::config("pool scales must be non-empty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Rescale {
    ups: Vec<Upsample2>,
    pool: bool,
}

impl Rescale {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (i, up) in self.ups.iter().enumerate() {
            y = up.forward(&y)?;
            if i + 1 < self.ups.len() {
                y = gelu(&y)?;
            }
        }
        if self.pool {
            let (_, _, h, w) = y.dims4()?;
            if h >= 2 && w >= 2 {
                y = max_pool2(&y)?;
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct FusionTrunk {
    rescale: Vec<Rescale>,
    ppm: Vec<(usize, Conv1x1)>,
    ppm_bottleneck: Conv3x3,
    laterals: Vec<Conv1x1>,
    fpn_convs: Vec<Conv3x3>,
    fuse: Conv3x3,
    width: usize,
}

impl FusionTrunk {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, cfg: &FusionConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.width;
        let rescale = (0..NUM_LEVELS)
            .map(|i| {
                let n_up = 2usize.saturating_sub(i);
                let ups = (0..n_up)
                    .map(|j| Upsample2::new(store, &join(prefix, &format!("rescale.{i}.{j}")), in_dim, in_dim))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Rescale { ups, pool: i == 3 })
            })
            .collect::<Result<Vec<_>>>()?;
        let ppm = cfg
            .pool_scales
            .iter()
            .map(|&s| Ok((s, Conv1x1::new(store, &join(prefix, &format!("ppm.{s}")), in_dim, c)?)))
            .collect::<Result<Vec<_>>>()?;
        let ppm_bottleneck =
            Conv3x3::new(store, &join(prefix, "ppm_bottleneck"), in_dim + c * cfg.pool_scales.len(), c)?;
        let laterals = (0..NUM_LEVELS - 1)
            .map(|i| Conv1x1::new(store, &join(prefix, &format!("lateral.{i}")), in_dim, c))
            .collect::<Result<Vec<_>>>()?;
        let fpn_convs = (0..NUM_LEVELS - 1)
            .map(|i| Conv3x3::new(store, &join(prefix, &format!("fpn.{i}")), c, c))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv3x3::new(store, &join(prefix, "fuse"), c * NUM_LEVELS, c)?;
        Ok(Self { rescale, ppm, ppm_bottleneck, laterals, fpn_convs, fuse, width: c })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn pooled_context(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let mut parts = vec![x.clone()];
        for (s, conv) in &self.ppm {
            let pooled = gelu(&conv.forward(&adaptive_avg_pool(x, *s)?)?)?;
            parts.push(resize_bilinear(&pooled, h, w)?);
        }
        gelu(&self.ppm_bottleneck.forward(&Tensor::cat(&parts, 1)?)?)
    }

    /// Fused `(B, width, 4√N, 4√N)` map.
    pub fn forward(&self, feats: &MultiLevelFeatures) -> Result<Tensor> {
        if feats.levels() != NUM_LEVELS {
            return Err(Error::config(format!("fusion expects {NUM_LEVELS} levels, got {}", feats.levels())));
        }
        let maps = (0..NUM_LEVELS)
            .map(|i| self.rescale[i].forward(&feats.map(i)?))
            .collect::<Result<Vec<_>>>()?;
        let mut lat: Vec<Tensor> = (0..NUM_LEVELS - 1)
            .map(|i| gelu(&self.laterals[i].forward(&maps[i])?))
            .collect::<Result<Vec<_>>>()?;
        lat.push(self.pooled_context(&maps[NUM_LEVELS - 1])?);
        for i in (0..NUM_LEVELS - 1).rev() {
            let (_, _, h, w) = lat[i].dims4()?;
            let up = resize_bilinear(&lat[i + 1], h, w)?;
            lat[i] = (&lat[i] + up)?;
        }
        let (_, _, h, w) = lat[0].dims4()?;
        let mut outs = Vec::with_capacity(NUM_LEVELS);
        for (i, l) in lat.iter().enumerate() {
            let refined = if i < NUM_LEVELS - 1 { gelu(&self.fpn_convs[i].forward(l)?)? } else { l.clone() };
            outs.push(resize_bilinear(&refined, h, w)?);
        }
        gelu(&self.fuse.forward(&Tensor::cat(&outs, 1)?)?)
    }
}
