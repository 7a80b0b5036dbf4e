//! Multi-level backbone features consumed by the task heads.

use std::fmt;
use std::str::FromStr;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::encoders::LayerFeatures;
use crate::error::{Error, Result};

/// Number of backbone layers every head consumes.
pub const NUM_LEVELS: usize = 4;

/// Backbone layers (1-based, non-decreasing) feeding the heads, shallow first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerSelection(Vec<usize>);

impl LayerSelection {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.len() != NUM_LEVELS {
            return Err(Error::config(format!("expected {NUM_LEVELS} layers, got {}", layers.len())));
        }
        if layers.contains(&0) {
            return Err(Error::config("layers are numbered from 1"));
        }
        if layers.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("layers must be listed shallow to deep"));
        }
        Ok(Self(layers))
    }

    /// `{4, 6, 8, 12}` for the 12-layer backbone.
    pub fn base() -> Self {
        Self(vec![4, 6, 8, 12])
    }

    /// `{1, 1, 2, 2}` for the 2-layer miniature backbone.
    pub fn miniature() -> Self {
        Self(vec![1, 1, 2, 2])
    }

    /// The default selection for a backbone of the given depth.
    pub fn for_depth(depth: usize) -> Self {
        if depth == 12 {
            return Self::base();
        }
        let pick = |f: f64| ((f * depth as f64).ceil() as usize).clamp(1, depth);
        Self(vec![pick(1.0 / 3.0), pick(0.5), pick(2.0 / 3.0), depth])
    }

    pub fn layers(&self) -> &[usize] {
        &self.0
    }

    pub fn check_depth(&self, depth: usize) -> Result<()> {
        match self.0.iter().find(|&&k| k > depth) {
            Some(k) => Err(Error::config(format!("layer {k} exceeds backbone depth {depth}"))),
            None => Ok(()),
        }
    }

    pub fn deepest(&self) -> usize {
        *self.0.last().expect("four layers")
    }
}

impl TryFrom<Vec<usize>> for LayerSelection {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LayerSelection> for Vec<usize> {
    fn from(s: LayerSelection) -> Self {
        s.0
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| Error::config(format!("bad layer index `{p}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }
}

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Selected layers split into cls features `(B, D)` and patch tokens
/// `(B, N, D)`.
#[derive(Debug, Clone)]
pub struct MultiLevelFeatures {
    pub cls: Vec<Tensor>,
    pub tokens: Vec<Tensor>,
    pub grid: usize,
}

impl MultiLevelFeatures {
    pub fn select(feats: &LayerFeatures, selection: &LayerSelection) -> Result<Self> {
        selection.check_depth(feats.depth())?;
        let mut cls = Vec::with_capacity(NUM_LEVELS);
        let mut tokens = Vec::with_capacity(NUM_LEVELS);
        let mut grid = 0;
        for &k in selection.layers() {
            let layer = feats.layer(k)?;
            let t = layer.dim(1)?;
            let n = t - 1;
            grid = (n as f64).sqrt().round() as usize;
            if grid * grid != n {
                return Err(Error::dim(format!("{n} patch tokens do not form a square grid")));
            }
            cls.push(layer.narrow(1, 0, 1)?.squeeze(1)?);
            tokens.push(layer.narrow(1, 1, n)?);
        }
        Ok(Self { cls, tokens, grid })
    }

    pub fn levels(&self) -> usize {
        self.tokens.len()
    }

    pub fn width(&self) -> Result<usize> {
        Ok(self.tokens[0].dim(D::Minus1)?)
    }

    /// Level `i` reshaped to a `(B, D, √N, √N)` map.
    pub fn map(&self, i: usize) -> Result<Tensor> {
        let (b, _, d) = self.tokens[i].dims3()?;
        Ok(self.tokens[i].transpose(1, 2)?.contiguous()?.reshape((b, d, self.grid, self.grid))?)
    }

    pub fn detach(&self) -> Self {
        Self {
            cls: self.cls.iter().map(Tensor::detach).collect(),
            tokens: self.tokens.iter().map(Tensor::detach).collect(),
            grid: self.grid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn selections() {
        assert_eq!(LayerSelection::base().layers(), &[4, 6, 8, 12]);
        assert_eq!(LayerSelection::for_depth(12), LayerSelection::base());
        assert_eq!(LayerSelection::for_depth(2), LayerSelection::miniature());
        assert_eq!("4, 6,8,12".parse::<LayerSelection>().unwrap(), LayerSelection::base());
        assert!("4,6,8".parse::<LayerSelection>().is_err());
        assert!("0,1,2,3".parse::<LayerSelection>().is_err());
        assert!(LayerSelection::base().check_depth(2).is_err());
        assert_eq!(LayerSelection::base().to_string(), "4,6,8,12");
    }

    #[test]
    fn tokens_reshape_to_grid() {
        let layer = Tensor::arange(0f64, (2 * 5 * 3) as f64, &Device::Cpu).unwrap().reshape((2, 5, 3)).unwrap();
        let feats = LayerFeatures::new(vec![layer.clone(), layer]);
        let m = MultiLevelFeatures::select(&feats, &LayerSelection::miniature()).unwrap();
        assert_eq!(m.grid, 2);
        assert_eq!(m.cls[0].dims(), &[2, 3]);
        let map = m.map(0).unwrap();
        assert_eq!(map.dims(), &[2, 3, 2, 2]);
        // patch (row 0, col 1) is sequence token 2
        let v = map.get(0).unwrap().get(2).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(v[0][1], (2 * 3 + 2) as f64);
    }
}
