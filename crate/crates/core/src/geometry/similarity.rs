use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2-D point `(x, y)` in pixel units; pixel centres sit on integer coordinates.
pub type Point = [f64; 2];

/// `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty`, i.e. the 2×3 matrix
/// `[[a, −b, tx], [b, a, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, tx: 0.0, ty: 0.0 }
    }

    pub fn from_params(scale: f64, rotation_rad: f64, translation: Point) -> Self {
        Self {
            a: scale * rotation_rad.cos(),
            b: scale * rotation_rad.sin(),
            tx: translation[0],
            ty: translation[1],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { a: 1.0, b: 0.0, tx: dx, ty: dy }
    }

    /// Maps a `src`-wide frame onto an `dst`-wide frame so that the borders of
    /// the two frames coincide (half-pixel aligned resize).
    pub fn resize(src: usize, dst: usize) -> Self {
        let k = dst as f64 / src as f64;
        Self { a: k, b: 0.0, tx: (k - 1.0) / 2.0, ty: (k - 1.0) / 2.0 }
    }

    /// Parses the row-major 2×3 matrix form, rejecting non-similarities.
    pub fn from_matrix(m: [f64; 6]) -> Result<Self> {
        let scale = (m[0].abs() + m[4].abs() + m[1].abs() + m[3].abs()).max(1.0);
        if (m[0] - m[4]).abs() > 1e-9 * scale || (m[1] + m[3]).abs() > 1e-9 * scale {
            return Err(Error::input("2×3 matrix is not a similarity transform"));
        }
        Ok(Self { a: m[0], b: m[3], tx: m[2], ty: m[5] })
    }

    pub fn matrix(&self) -> [f64; 6] {
        [self.a, -self.b, self.tx, self.b, self.a, self.ty]
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn apply(&self, p: Point) -> Point {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        Self {
            a: self.a * first.a - self.b * first.b,
            b: self.b * first.a + self.a * first.b,
            tx: self.a * first.tx - self.b * first.ty + self.tx,
            ty: self.b * first.tx + self.a * first.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.a * self.a + self.b * self.b;
        if !(det > 1e-18) || !det.is_finite() {
            return Err(Error::Singular(format!("similarity with scale {} is not invertible", det.sqrt())));
        }
        let a = self.a / det;
        let b = -self.b / det;
        Ok(Self {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        })
    }

    /// Frobenius distance between the 2×3 matrices.
    pub fn frobenius_distance(&self, other: &SimilarityTransform) -> f64 {
        self.matrix()
            .iter()
            .zip(other.matrix())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Least-squares similarity mapping `src` onto `dst`.
///
/// With centred points `p`, `q` written as complex numbers the optimum is
/// `a + ib = Σ q·conj(p) / Σ |p|²`.
pub fn estimate_similarity(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::dim(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 2 {
        return Err(Error::Singular("need at least two point pairs".into()));
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite landmark coordinate"));
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let s = pts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    let mut spread_d = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ms[0], p[1] - ms[1]);
        let (qx, qy) = (q[0] - md[0], q[1] - md[1]);
        re += qx * px + qy * py;
        im += qy * px - qx * py;
        norm += px * px + py * py;
        spread_d += qx * qx + qy * qy;
    }
    let scale_ref = ms[0].abs().max(ms[1].abs()).max(1.0);
    if norm <= 1e-18 * scale_ref * scale_ref * n {
        return Err(Error::Singular("source points coincide".into()));
    }
    if spread_d <= 1e-18 * scale_ref * scale_ref * n {
        return Err(Error::Singular("target points coincide".into()));
    }
    let (a, b) = (re / norm, im / norm);
    Ok(SimilarityTransform {
        a,
        b,
        tx: md[0] - (a * ms[0] - b * ms[1]),
        ty: md[1] - (b * ms[0] + a * ms[1]),
    })
}

/// Sampling ranges for augmenting an alignment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotations are drawn from `[−rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translations are drawn per axis from `[−f·s, f·s]`.
    pub translation_frac: f64,
}

impl AugmentConfig {
    pub fn parsing() -> Self {
        Self { rotation_deg: 18.0, scale_min: 0.9, scale_max: 1.1, translation_frac: 0.01 }
    }

    pub fn alignment() -> Self {
        Self { rotation_deg: 10.0, ..Self::parsing() }
    }

    pub fn none() -> Self {
        Self { rotation_deg: 0.0, scale_min: 1.0, scale_max: 1.0, translation_frac: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_deg >= 0.0 && self.translation_frac >= 0.0) {
            return Err(Error::config("augmentation ranges must be non-negative"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::config("augmentation scale range must satisfy 0 < min ≤ max"));
        }
        Ok(())
    }
}

/// One sampled augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: Point,
}

impl Augmentation {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, s: usize, rng: &mut R) -> Self {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let rotation_deg = sym(rng, cfg.rotation_deg);
        let scale = if cfg.scale_max > cfg.scale_min {
            rng.random_range(cfg.scale_min..=cfg.scale_max)
        } else {
            cfg.scale_min
        };
        let t = cfg.translation_frac * s as f64;
        let translation = [sym(rng, t), sym(rng, t)];
        Self { rotation_deg, scale, translation }
    }

    /// Rotation and scale about the centre of an `s × s` frame, then translation.
    pub fn to_transform(&self, s: usize) -> SimilarityTransform {
        let c = (s as f64 - 1.0) / 2.0;
        let rs = SimilarityTransform::from_params(self.scale, self.rotation_deg.to_radians(), [0.0, 0.0]);
        let shift = SimilarityTransform::translation(c + self.translation[0], c + self.translation[1]);
        shift.compose(&rs).compose(&SimilarityTransform::translation(-c, -c))
    }
}

/// Composes a random augmentation (in the `s × s` target frame) after `t`.
pub fn augment_transform<R: Rng + ?Sized>(
    t: &SimilarityTransform,
    cfg: &AugmentConfig,
    s: usize,
    rng: &mut R,
) -> SimilarityTransform {
    Augmentation::sample(cfg, s, rng).to_transform(s).compose(t)
}
