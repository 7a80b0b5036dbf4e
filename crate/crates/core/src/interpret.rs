//! Grad-CAM saliency of the image encoder for a text query.

use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::image::{images_to_tensor, ImageTensor};
use crate::nn::bilinear_matrix;
use crate::pretraining::DualEncoder;

/// Patch-grid saliency with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    grid: usize,
    values: Vec<f64>,
    degenerate: bool,
}

impl SaliencyMap {
    /// Min-max normalises a non-negative map; a constant map becomes all
    /// zeros and is flagged degenerate.
    pub fn from_rectified(grid: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != grid * grid {
            return Err(Error::dim(format!("{} values for a {grid}×{grid} grid", raw.len())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite saliency".into()));
        }
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-12 * hi.abs().max(1e-300) {
            return Ok(Self { grid, values: vec![0.0; raw.len()], degenerate: true });
        }
        let values = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
        Ok(Self { grid, values, degenerate: false })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid + col]
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Bilinear upsampling to `size × size`.
    pub fn upsample(&self, size: usize) -> Vec<f64> {
        let m = bilinear_matrix(self.grid, size);
        let g = self.grid;
        let mut rows = vec![0.0; size * g];
        for o in 0..size {
            for c in 0..g {
                rows[o * g + c] = (0..g).map(|r| m[o * g + r] * self.values[r * g + c]).sum();
            }
        }
        let mut out = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                out[y * size + x] = (0..g).map(|c| m[x * g + c] * rows[y * g + c]).sum::<f64>().clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Whitespace-separated matrix, one grid row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.grid {
            let row: Vec<String> = (0..self.grid).map(|c| format!("{:.6}", self.get(r, c))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    /// Blends a heat colour ramp over the image.
    pub fn overlay(&self, image: &ImageTensor, opacity: f64) -> Result<ImageTensor> {
        if image.height() != image.width() {
            return Err(Error::dim("overlay expects a square image"));
        }
        let s = image.width();
        let heat = self.upsample(s);
        let mut data = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            for x in 0..s {
                let colour = heat_colour(heat[y * s + x]);
                for (c, &h) in colour.iter().enumerate() {
                    data.push(((1.0 - opacity) * image.get(y, x, c) + opacity * h).clamp(0.0, 1.0));
                }
            }
        }
        ImageTensor::new(s, s, data)
    }
}

/// Blue → cyan → yellow → red.
fn heat_colour(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

#[derive(Debug)]
pub struct GradCam {
    pub map: SaliencyMap,
    /// Similarity `e_I · e_T` of the query.
    pub score: f64,
    /// Rectified map before normalisation.
    pub raw: Vec<f64>,
}

impl GradCam {
    /// Writes `<stem>.png` (overlay) and `<stem>.txt` (grid) into `dir`.
    pub fn save(&self, image: &ImageTensor, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        self.map.overlay(image, 0.5)?.save(&dir.join(format!("{stem}.png")))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.map.to_text()).map_err(|source| Error::Io { path: txt, source })
    }
}

/// Similarity of the image embedding recomputed from the hook activation
/// with a fixed text embedding `(1, E)`.
pub fn hook_similarity(model: &DualEncoder, residual: &Tensor, activation: &Tensor, text: &Tensor) -> Result<Tensor> {
    let out = model.image.hook_tail(residual, activation)?;
    let cls = model.image.cls_feature(&out)?;
    let e = model.image_proj.project(&cls)?;
    Ok(e.mul(text)?.sum_all()?)
}

/// Unit-norm text embedding for a query, detached from the graph.
pub fn text_embedding(model: &DualEncoder, text: &str) -> Result<Tensor> {
    if text.trim().is_empty() {
        return Err(Error::input("empty text query"));
    }
    Ok(model.embed_texts(&model.tokenize(&[text.to_string()]))?.detach())
}

pub fn gradcam(model: &DualEncoder, image: &ImageTensor, text: &str) -> Result<GradCam> {
    let cfg = &model.image.config();
    if image.height() != cfg.image_size || image.width() != cfg.image_size {
        return Err(Error::dim(format!(
            "image {}×{} but the encoder expects {s}×{s}",
            image.height(),
            image.width(),
            s = cfg.image_size
        )));
    }
    let et = text_embedding(model, text)?;
    let x = images_to_tensor(std::slice::from_ref(image), et.dtype(), et.device())?;
    let hooked = model.image.forward_hooked(&x)?;
    let score = hook_similarity(model, &hooked.residual, hooked.activation.as_tensor(), &et)?;
    let grads = score.backward()?;
    let act = hooked.activation.as_tensor();
    let grad = match grads.get(act) {
        Some(g) => g.clone(),
        None => act.zeros_like()?,
    };
    let n = cfg.grid() * cfg.grid();
    // Drop the cls token, then weight channels by their mean gradient.
    let a = act.narrow(1, 1, n)?.squeeze(0)?;
    let g = grad.narrow(1, 1, n)?.squeeze(0)?;
    let weights = g.mean_keepdim(0)?;
    let cam = a.broadcast_mul(&weights)?.sum(D::Minus1)?.relu()?;
    let raw = cam.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let map = SaliencyMap::from_rectified(cfg.grid(), &raw)?;
    let score = score.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok(GradCam { map, score, raw })
}
