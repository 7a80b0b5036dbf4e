use super::similarity::Point;
use crate::error::{Error, Result};

pub const HEATMAP_SIZE: usize = 128;
pub const DECODE_WINDOW: usize = 5;

/// `L` square channels stored channel-major, row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    channels: usize,
    size: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(channels: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * size * size {
            return Err(Error::dim(format!(
                "{} values for {channels}×{size}×{size} heatmap",
                values.len()
            )));
        }
        Ok(Self { channels, size, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, l: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.values[l * n..(l + 1) * n]
    }
}

/// Unnormalised unit-σ Gaussians: `exp(−‖p − ptₗ‖² / 2)`.
pub fn render_heatmap(pts: &[Point], size: usize) -> Heatmap {
    let mut values = Vec::with_capacity(pts.len() * size * size);
    for p in pts {
        for y in 0..size {
            let dy = y as f64 - p[1];
            for x in 0..size {
                let dx = x as f64 - p[0];
                values.push((-(dx * dx + dy * dy) / 2.0).exp().clamp(0.0, 1.0));
            }
        }
    }
    Heatmap { channels: pts.len(), size, values }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedLandmark {
    pub point: Point,
    /// Set when every value of the channel was equal.
    pub degenerate: bool,
}

/// Decodes one `size × size` channel of logits: argmax (lowest index on
/// ties), refined by the softmax-weighted mean coordinate over the window
/// centred on it (clipped at the border).
pub fn decode_channel(logits: &[f64], size: usize) -> Result<DecodedLandmark> {
    if logits.len() != size * size || size == 0 {
        return Err(Error::dim(format!("{} logits for a {size}×{size} channel", logits.len())));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("NaN in heatmap logits"));
    }
    let mut best = 0;
    let (mut lo, mut hi) = (logits[0], logits[0]);
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let (by, bx) = (best / size, best % size);
    if lo == hi {
        return Ok(DecodedLandmark { point: [bx as f64, by as f64], degenerate: true });
    }
    let r = DECODE_WINDOW / 2;
    let y_range = by.saturating_sub(r)..=(by + r).min(size - 1);
    let x_range = bx.saturating_sub(r)..=(bx + r).min(size - 1);
    let peak = logits[best];
    let (mut wsum, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in y_range {
        for x in x_range.clone() {
            let w = (logits[y * size + x] - peak).exp();
            wsum += w;
            sx += w * x as f64;
            sy += w * y as f64;
        }
    }
    Ok(DecodedLandmark { point: [sx / wsum, sy / wsum], degenerate: false })
}

/// Decodes every channel of an `L × size × size` logit map.
pub fn decode_logits(logits: &[f64], channels: usize, size: usize) -> Result<Vec<DecodedLandmark>> {
    if logits.len() != channels * size * size {
        return Err(Error::dim("logit map size mismatch"));
    }
    logits.chunks(size * size).map(|c| decode_channel(c, size)).collect()
}

/// Decodes a heatmap of values in `[0, 1]` through their logarithm, so a
/// rendered Gaussian is read back as its exact log-density.
pub fn decode_heatmap(h: &Heatmap) -> Result<Vec<DecodedLandmark>> {
    let logs: Vec<f64> = h.values.iter().map(|&v| v.max(f64::MIN_POSITIVE).ln()).collect();
    decode_logits(&logs, h.channels, h.size)
}
