use serde::{Deserialize, Serialize};

use super::similarity::{Point, SimilarityTransform};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, LabelMap};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("warping factor {alpha} outside (0, 1]")))
    }
}

/// Identity on `[−1 + α, 1 − α]`, a scaled `tanh` beyond, odd-symmetric.
pub fn tanh_alpha(x: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let knee = 1.0 - alpha;
    Ok(if x > knee {
        alpha * ((x - knee) / alpha).tanh() + knee
    } else if x < -knee {
        -(alpha * ((-x - knee) / alpha).tanh() + knee)
    } else {
        x
    })
}

/// Inverse of [`tanh_alpha`] on `(−1, 1)`; `None` outside that open interval.
pub fn tanh_alpha_inverse(y: f64, alpha: f64) -> Result<Option<f64>> {
    check_alpha(alpha)?;
    if !(y.abs() < 1.0) {
        return Ok(None);
    }
    let knee = 1.0 - alpha;
    let out = if y.abs() <= knee {
        y
    } else {
        let r = ((y.abs() - knee) / alpha).atanh() * alpha + knee;
        r.copysign(y)
    };
    Ok(out.is_finite().then_some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpConfig {
    pub alpha: f64,
    pub target_size: usize,
    pub enabled: bool,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self { alpha: 0.8, target_size: 224, enabled: true }
    }
}

impl WarpConfig {
    pub fn disabled(target_size: usize) -> Self {
        Self { alpha: 0.8, target_size, enabled: false }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha).map_err(|e| Error::config(e.to_string()))?;
        if self.target_size == 0 {
            return Err(Error::config("warp target size must be positive"));
        }
        Ok(())
    }
}

/// Pixel coordinate → `[−1, 1]` over an `s`-pixel frame (frame edges at ±1).
pub fn normalize_coord(q: f64, s: usize) -> f64 {
    (2.0 * q + 1.0) / s as f64 - 1.0
}

pub fn denormalize_coord(u: f64, s: usize) -> f64 {
    ((u + 1.0) * s as f64 - 1.0) / 2.0
}

/// Forward map of a source point: similarity, then (if enabled) `tanh_α` on
/// the normalised target-frame coordinates.
pub fn transform_point(p: Point, t: &SimilarityTransform, cfg: &WarpConfig) -> Result<Point> {
    let q = t.apply(p);
    if !cfg.enabled {
        return Ok(q);
    }
    let s = cfg.target_size;
    let mut out = [0.0; 2];
    for i in 0..2 {
        out[i] = denormalize_coord(tanh_alpha(normalize_coord(q[i], s), cfg.alpha)?, s);
    }
    Ok(out)
}

pub fn transform_points(pts: &[Point], t: &SimilarityTransform, cfg: &WarpConfig) -> Result<Vec<Point>> {
    cfg.validate()?;
    t.inverse()?;
    pts.iter().map(|&p| transform_point(p, t, cfg)).collect()
}

/// Source-image location sampled by target pixel `q`; `None` when the warp
/// sends it to infinity (the open-interval boundary of `tanh_α`).
fn source_location(q: Point, inv: &SimilarityTransform, cfg: &WarpConfig) -> Result<Option<Point>> {
    let aligned = if cfg.enabled {
        let s = cfg.target_size;
        let mut a = [0.0; 2];
        for i in 0..2 {
            match tanh_alpha_inverse(normalize_coord(q[i], s), cfg.alpha)? {
                Some(u) => a[i] = denormalize_coord(u, s),
                None => return Ok(None),
            }
        }
        a
    } else {
        q
    };
    Ok(Some(inv.apply(aligned)))
}

/// Inverse of [`transform_point`] for points inside the warped frame.
pub fn inverse_transform_points(pts: &[Point], t: &SimilarityTransform, cfg: &WarpConfig) -> Result<Vec<Point>> {
    cfg.validate()?;
    let inv = t.inverse()?;
    pts.iter()
        .map(|&q| {
            source_location(q, &inv, cfg)?
                .ok_or_else(|| Error::input(format!("point {q:?} lies on the warped frame boundary")))
        })
        .collect()
}

/// Bilinear lookup with zero padding outside the image.
pub fn sample_bilinear(image: &ImageTensor, x: f64, y: f64) -> [f64; 3] {
    let (h, w) = (image.height() as isize, image.width() as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let mut out = [0.0; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            let wgt = wy * wx;
            if wgt == 0.0 || yy < 0 || xx < 0 || yy >= h || xx >= w {
                continue;
            }
            let p = image.pixel(yy as usize, xx as usize);
            for c in 0..3 {
                out[c] += wgt * p[c];
            }
        }
    }
    out
}

/// Warps an image into the `s × s` target frame by backward sampling.
pub fn warp_image(image: &ImageTensor, t: &SimilarityTransform, cfg: &WarpConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    let inv = t.inverse()?;
    let s = cfg.target_size;
    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let px = match source_location([x as f64, y as f64], &inv, cfg)? {
                Some(src) => sample_bilinear(image, src[0], src[1]),
                None => [0.0; 3],
            };
            data.extend(px.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    ImageTensor::new(s, s, data)
}

/// Nearest-neighbour counterpart of [`warp_image`] for class-index maps;
/// outside pixels become label 0.
pub fn warp_label_map(labels: &LabelMap, t: &SimilarityTransform, cfg: &WarpConfig) -> Result<LabelMap> {
    cfg.validate()?;
    let inv = t.inverse()?;
    let s = cfg.target_size;
    let (h, w) = (labels.height() as f64, labels.width() as f64);
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let v = match source_location([x as f64, y as f64], &inv, cfg)? {
                Some(src) => {
                    let (sx, sy) = (src[0].round(), src[1].round());
                    if sx >= 0.0 && sy >= 0.0 && sx < w && sy < h {
                        labels.get(sy as usize, sx as usize)
                    } else {
                        0
                    }
                }
                None => 0,
            };
            out.push(v);
        }
    }
    LabelMap::new(s, s, out)
}

/// Half-pixel-aligned bilinear resize, used as the reference for the
/// unwarped identity case.
pub fn resize_image(image: &ImageTensor, s: usize) -> Result<ImageTensor> {
    if image.height() != image.width() {
        return Err(Error::dim("resize expects a square image"));
    }
    warp_image(image, &SimilarityTransform::resize(image.width(), s), &WarpConfig::disabled(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_image(n: usize) -> ImageTensor {
        let data = (0..n * n * 3).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
        ImageTensor::new(n, n, data).unwrap()
    }

    #[test]
    fn alpha_one_is_tanh() {
        for i in 0..1000 {
            let x = -4.0 + 8.0 * i as f64 / 999.0;
            assert!((tanh_alpha(x, 1.0).unwrap() - x.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn printed_values() {
        assert_eq!(tanh_alpha(0.1, 0.8).unwrap(), 0.1);
        assert!((tanh_alpha(1.0, 0.5).unwrap() - 0.880797).abs() < 1e-6);
        assert!(tanh_alpha(0.3, 0.0).is_err());
        assert!(tanh_alpha(0.3, 1.2).is_err());
    }

    #[test]
    fn derivative_continuous_at_knee() {
        for alpha in [0.2, 0.5, 0.8] {
            let knee = 1.0 - alpha;
            let h = 1e-7;
            let left = (tanh_alpha(knee, alpha).unwrap() - tanh_alpha(knee - h, alpha).unwrap()) / h;
            let right = (tanh_alpha(knee + h, alpha).unwrap() - tanh_alpha(knee, alpha).unwrap()) / h;
            assert!((left - right).abs() < 1e-6, "alpha {alpha}: {left} vs {right}");
        }
    }

    proptest! {
        #[test]
        fn odd_increasing_bounded(x in -10.0f64..10.0, dx in 1e-6f64..1.0, alpha in 0.01f64..=1.0) {
            let f = |v| tanh_alpha(v, alpha).unwrap();
            prop_assert_eq!(f(-x), -f(x));
            prop_assert!(f(x + dx) >= f(x));
            // open range (−1, 1), up to f64 saturation of tanh far from the knee
            prop_assert!(f(x).abs() <= 1.0);
            if x.abs() < 1.0 {
                prop_assert!(f(x).abs() < 1.0);
            }
        }

        #[test]
        fn inverse_round_trip(x in -3.0f64..3.0, alpha in 0.05f64..=1.0) {
            let y = tanh_alpha(x, alpha).unwrap();
            prop_assume!(y.abs() < 1.0 - 1e-9);
            let back = tanh_alpha_inverse(y, alpha).unwrap().unwrap();
            prop_assert!((back - x).abs() < 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn identity_unwarped_same_size_is_exact() {
        let img = test_image(16);
        let out = warp_image(&img, &SimilarityTransform::identity(), &WarpConfig::disabled(16)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_matches_separable_bilinear_oracle() {
        let img = test_image(12);
        let out = resize_image(&img, 20).unwrap();
        let k = 20.0 / 12.0;
        let coord = |q: usize| ((q as f64 + 0.5) / k - 0.5).clamp(-1.0, 12.0);
        for y in 0..20 {
            for x in 0..20 {
                let (sx, sy) = (coord(x), coord(y));
                let (x0, y0) = (sx.floor(), sy.floor());
                let mut expect = [0.0; 3];
                for (yy, wy) in [(y0, 1.0 - (sy - y0)), (y0 + 1.0, sy - y0)] {
                    for (xx, wx) in [(x0, 1.0 - (sx - x0)), (x0 + 1.0, sx - x0)] {
                        if yy >= 0.0 && xx >= 0.0 && yy < 12.0 && xx < 12.0 {
                            let p = img.pixel(yy as usize, xx as usize);
                            for c in 0..3 {
                                expect[c] += wy * wx * p[c];
                            }
                        }
                    }
                }
                let got = out.pixel(y, x);
                for c in 0..3 {
                    assert!((got[c] - expect[c]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn identity_region_matches_plain_affine() {
        let img = test_image(32);
        let t = SimilarityTransform::from_params(1.1, 0.1, [-1.0, 2.0]);
        let warped = warp_image(&img, &t, &WarpConfig { alpha: 0.8, target_size: 32, enabled: true }).unwrap();
        let plain = warp_image(&img, &t, &WarpConfig::disabled(32)).unwrap();
        // |u| ≤ 0.2 ⇔ pixels 12.8 ≤ q + 0.5 ≤ 19.2
        for y in 13..=18 {
            for x in 13..=18 {
                assert_eq!(warped.pixel(y, x), plain.pixel(y, x));
            }
        }
    }

    #[test]
    fn tiny_alpha_degenerates_to_crop() {
        let img = test_image(32);
        let t = SimilarityTransform::translation(-8.0, -8.0);
        let warped = warp_image(&img, &t, &WarpConfig { alpha: 1e-3, target_size: 16, enabled: true }).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let got = warped.pixel(y, x);
                let want = img.pixel(y + 8, x + 8);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-6, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn warp_reveals_periphery() {
        // a bright pixel outside the crop becomes visible once warping is on
        let mut img = ImageTensor::zeros(64, 64);
        img.set(4, 32, 0, 1.0);
        let t = SimilarityTransform::translation(-16.0, -16.0);
        let crop = warp_image(&img, &t, &WarpConfig::disabled(32)).unwrap();
        let warped = warp_image(&img, &t, &WarpConfig { alpha: 0.8, target_size: 32, enabled: true }).unwrap();
        let sum = |im: &ImageTensor| im.data().iter().sum::<f64>();
        assert_eq!(sum(&crop), 0.0);
        assert!(sum(&warped) > 0.0);
    }

    #[test]
    fn points_round_trip_and_translate() {
        let cfg = WarpConfig { alpha: 0.8, target_size: 224, enabled: true };
        let t = SimilarityTransform::from_params(0.9, -0.3, [20.0, 10.0]);
        let pts = vec![[100.0, 100.0], [120.0, 95.0], [30.0, 200.0]];
        let fwd = transform_points(&pts, &t, &cfg).unwrap();
        let back = inverse_transform_points(&fwd, &t, &cfg).unwrap();
        for (p, q) in pts.iter().zip(&back) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
        let off = WarpConfig::disabled(224);
        assert_eq!(transform_points(&pts, &SimilarityTransform::identity(), &off).unwrap(), pts);
        let moved = transform_points(&pts, &SimilarityTransform::translation(3.0, -2.0), &off).unwrap();
        for (p, q) in pts.iter().zip(&moved) {
            assert_eq!([q[0] - p[0], q[1] - p[1]], [3.0, -2.0]);
        }
    }

    #[test]
    fn label_maps_never_blend() {
        let labels: Vec<u8> = (0..16 * 16).map(|i| ((i / 16 + i % 16) % 3) as u8).collect();
        let map = LabelMap::new(16, 16, labels).unwrap();
        let t = SimilarityTransform::from_params(1.37, 0.3, [2.0, -1.0]);
        let out = warp_label_map(&map, &t, &WarpConfig { alpha: 0.8, target_size: 24, enabled: true }).unwrap();
        assert!(out.labels().iter().all(|&l| l < 3));
    }

    #[test]
    fn singular_transform_rejected() {
        let t = SimilarityTransform { a: 0.0, b: 0.0, tx: 0.0, ty: 0.0 };
        assert!(matches!(
            warp_image(&test_image(8), &t, &WarpConfig::disabled(8)),
            Err(Error::Singular(_))
        ));
    }
}
