use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{join, Linear};
use crate::params::ParamStore;

/// Which tower a projection head belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Image,
    Text,
}

/// Bias-free MLP mapping a tower feature into the shared metric space,
/// followed by L2 normalisation.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    tower: Tower,
    layers: Vec<Linear>,
}

impl ProjectionHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        tower: Tower,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("projection depth must be at least 1"));
        }
        let layers = (0..depth)
            .map(|i| {
                let out = if i + 1 == depth { out_dim } else { in_dim };
                Linear::new(store, &join(prefix, &format!("{i}")), in_dim, out, false)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tower, layers })
    }

    pub fn tower(&self) -> Tower {
        self.tower
    }

    /// Unnormalised projection `(B, E)`.
    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let mut x = f.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i + 1 < self.layers.len() {
                x = x.gelu_erf()?;
            }
        }
        Ok(x)
    }

    /// Unit-norm embeddings `(B, E)`.
    pub fn project(&self, f: &Tensor) -> Result<Tensor> {
        l2_normalize_rows(&self.forward(f)?)
    }
}

/// Normalises each row to unit L2 norm; a (near-)zero row is a numerical
/// degeneracy and is reported rather than divided by.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = norms.to_dtype(DType::F64)?.flatten_all()?.min(0)?.to_scalar::<f64>()?;
    if !(min > 1e-12) {
        return Err(Error::numerical(format!("cannot normalise a row with norm {min:e}")));
    }
    Ok(x.broadcast_div(&norms)?)
}
