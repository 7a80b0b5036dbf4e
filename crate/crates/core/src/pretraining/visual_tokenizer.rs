//! Discrete patch tokenizers providing the prediction targets for masked
//! image modeling.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Maps every `patch × patch` cell of an image to an index in `0..vocab_size`.
pub trait VisualTokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Row-major patch indices, `(H / patch) · (W / patch)` of them.
    fn tokenize(&self, image: &ImageTensor, patch: usize) -> Result<Vec<u32>>;
}

/// Uniform quantisation of each patch's mean colour into a
/// `bins × bins × bins` RGB grid; index = `(r · bins + g) · bins + b`.
#[derive(Debug, Clone, Copy)]
pub struct ColorGridTokenizer {
    bins: usize,
}

impl Default for ColorGridTokenizer {
    fn default() -> Self {
        Self { bins: 8 }
    }
}

impl ColorGridTokenizer {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("colour grid needs at least one bin"));
        }
        Ok(Self { bins })
    }

    pub fn bin_index(&self, rgb: [usize; 3]) -> u32 {
        ((rgb[0] * self.bins + rgb[1]) * self.bins + rgb[2]) as u32
    }

    fn quantize(&self, v: f64) -> usize {
        ((v * self.bins as f64).floor() as usize).min(self.bins - 1)
    }
}

impl VisualTokenizer for ColorGridTokenizer {
    fn vocab_size(&self) -> usize {
        self.bins.pow(3)
    }

    fn tokenize(&self, image: &ImageTensor, patch: usize) -> Result<Vec<u32>> {
        let (h, w) = (image.height(), image.width());
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::dim(format!("image {h}×{w} not divisible by patch size {patch}")));
        }
        let (gh, gw) = (h / patch, w / patch);
        let area = (patch * patch) as f64;
        let mut out = Vec::with_capacity(gh * gw);
        for py in 0..gh {
            for px in 0..gw {
                let mut sum = [0.0f64; 3];
                for y in py * patch..(py + 1) * patch {
                    for x in px * patch..(px + 1) * patch {
                        let p = image.pixel(y, x);
                        for c in 0..3 {
                            sum[c] += p[c];
                        }
                    }
                }
                let bins = sum.map(|s| self.quantize(s / area));
                out.push(self.bin_index(bins));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white_hit_corner_bins() {
        let tok = ColorGridTokenizer::default();
        assert_eq!(tok.vocab_size(), 512);
        let black = ImageTensor::zeros(32, 32);
        assert!(tok.tokenize(&black, 16).unwrap().iter().all(|&i| i == tok.bin_index([0, 0, 0])));
        let white = ImageTensor::filled(32, 32, [1.0; 3]).unwrap();
        assert!(tok.tokenize(&white, 16).unwrap().iter().all(|&i| i == tok.bin_index([7, 7, 7])));
        assert_eq!(tok.bin_index([7, 7, 7]), 511);
    }

    #[test]
    fn deterministic_and_patch_local() {
        let tok = ColorGridTokenizer::default();
        let mut img = ImageTensor::zeros(32, 32);
        for y in 0..16 {
            for x in 16..32 {
                img.set(y, x, 0, 0.9);
            }
        }
        let a = tok.tokenize(&img, 16).unwrap();
        assert_eq!(a, tok.tokenize(&img, 16).unwrap());
        assert_eq!(a, vec![0, tok.bin_index([7, 0, 0]), 0, 0]);
    }

    #[test]
    fn indivisible_image_rejected() {
        let tok = ColorGridTokenizer::default();
        assert!(tok.tokenize(&ImageTensor::zeros(20, 32), 16).is_err());
    }
}
