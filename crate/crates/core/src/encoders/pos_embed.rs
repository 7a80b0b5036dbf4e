use candle_core::{DType, Tensor};

use crate::error::{Error, Result};

const CUBIC_A: f64 = -0.75;

fn cubic_near(t: f64) -> f64 {
    ((CUBIC_A + 2.0) * t - (CUBIC_A + 3.0)) * t * t + 1.0
}

fn cubic_far(t: f64) -> f64 {
    ((CUBIC_A * t - 5.0 * CUBIC_A) * t + 8.0 * CUBIC_A) * t - 4.0 * CUBIC_A
}

fn cubic_weights(t: f64) -> [f64; 4] {
    [cubic_far(t + 1.0), cubic_near(t), cubic_near(1.0 - t), cubic_far(2.0 - t)]
}

/// Per-output taps and weights for 1-D bicubic resampling
/// (half-pixel centres, clamped borders).
fn taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let clamp = |i: f64| i.clamp(0.0, (input - 1) as f64) as usize;
            let idx = [clamp(base - 1.0), clamp(base), clamp(base + 1.0), clamp(base + 2.0)];
            (idx, cubic_weights(t))
        })
        .collect()
}

/// Bicubic resize of a `src × src × channels` grid (row-major, channel last)
/// to `dst × dst × channels`.
pub fn bicubic_resize_grid(values: &[f64], src: usize, dst: usize, channels: usize) -> Vec<f64> {
    assert_eq!(values.len(), src * src * channels);
    let t = taps(src, dst);
    // rows first
    let mut tmp = vec![0.0; dst * src * channels];
    for (oy, (iy, wy)) in t.iter().enumerate() {
        for x in 0..src {
            for c in 0..channels {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wy[k] * values[(iy[k] * src + x) * channels + c];
                }
                tmp[(oy * src + x) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; dst * dst * channels];
    for oy in 0..dst {
        for (ox, (ix, wx)) in t.iter().enumerate() {
            for c in 0..channels {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wx[k] * tmp[(oy * src + ix[k]) * channels + c];
                }
                out[(oy * dst + ox) * channels + c] = acc;
            }
        }
    }
    out
}

/// Up-samples a `(1 + n², D)` positional table to `(1 + g², D)` for a target
/// grid `g ≥ n`. The cls row is copied unchanged.
pub fn interpolate_pos_embeddings(pe: &Tensor, target_grid: usize) -> Result<Tensor> {
    let (rows, d) = pe.dims2()?;
    let n = rows.checked_sub(1).ok_or_else(|| Error::input("empty positional table"))?;
    let src = (n as f64).sqrt().round() as usize;
    if src * src != n || n == 0 {
        return Err(Error::input(format!("positional grid of {n} tokens is not square")));
    }
    if target_grid < src {
        return Err(Error::input(format!("target grid {target_grid} smaller than source grid {src}")));
    }
    let dtype = pe.dtype();
    let values = pe.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let (cls, grid) = values.split_at(d);
    let resized = bicubic_resize_grid(grid, src, target_grid, d);
    let mut out = Vec::with_capacity(d * (1 + target_grid * target_grid));
    out.extend_from_slice(cls);
    out.extend(resized);
    Ok(Tensor::from_vec(out, (1 + target_grid * target_grid, d), pe.device())?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn table(grid: usize, d: usize) -> Tensor {
        let n = (1 + grid * grid) * d;
        let v: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        Tensor::from_vec(v, (1 + grid * grid, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn upsample_14_to_28_keeps_cls() {
        let pe = table(14, 6);
        let out = interpolate_pos_embeddings(&pe, 28).unwrap();
        assert_eq!(out.dims(), &[785, 6]);
        let a = pe.get(0).unwrap().to_vec1::<f64>().unwrap();
        let b = out.get(0).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_grid_is_identity() {
        let pe = table(14, 4);
        let out = interpolate_pos_embeddings(&pe, 14).unwrap();
        let diff = (out - &pe).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-6);
    }

    #[test]
    fn constant_channel_stays_constant() {
        let src = 5;
        let values: Vec<f64> = (0..src * src).flat_map(|i| [3.25, i as f64]).collect();
        let out = bicubic_resize_grid(&values, src, 11, 2);
        for px in out.chunks(2) {
            assert!((px[0] - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_ramp_stays_increasing() {
        let src = 8;
        let values: Vec<f64> = (0..src * src).map(|i| (i % src) as f64).collect();
        let out = bicubic_resize_grid(&values, src, 16, 1);
        for ox in 1..16 {
            assert!(out[3 * 16 + ox] > out[3 * 16 + ox - 1]);
        }
        for oy in 0..16 {
            assert!((out[oy * 16 + 5] - out[5]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_square_rejected() {
        let pe = Tensor::zeros((1 + 12, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(interpolate_pos_embeddings(&pe, 4), Err(Error::Input(_))));
        let pe = table(4, 2);
        assert!(matches!(interpolate_pos_embeddings(&pe, 3), Err(Error::Input(_))));
    }
}
