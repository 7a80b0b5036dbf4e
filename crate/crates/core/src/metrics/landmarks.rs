//! Normalised landmark error, failure rate and the cumulative error curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Outer eye corners in the 98-point annotation.
pub const WFLW_OUTER_EYES: (usize, usize) = (60, 72);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    Diag,
    Box,
    InterOcular,
}

impl NormalizerKind {
    /// Column label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            NormalizerKind::Diag => "NME_diag",
            NormalizerKind::Box => "NME_box",
            NormalizerKind::InterOcular => "NME_inter-ocular",
        }
    }

    pub fn definition(&self) -> &'static str {
        match self {
            NormalizerKind::Diag => "ground-truth box diagonal sqrt(w^2+h^2)",
            NormalizerKind::Box => "sqrt(w*h) of the ground-truth box",
            NormalizerKind::InterOcular => "outer-eye-corner distance",
        }
    }
}

impl std::str::FromStr for NormalizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" => Ok(NormalizerKind::Diag),
            "box" => Ok(NormalizerKind::Box),
            "inter_ocular" | "inter-ocular" => Ok(NormalizerKind::InterOcular),
            other => Err(Error::input(format!("unknown normalizer {other:?}"))),
        }
    }
}

/// Normaliser together with the data it needs. Boxes are `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalizer {
    Diag([f64; 4]),
    Box([f64; 4]),
    InterOcular { left: usize, right: usize },
}

impl Normalizer {
    pub fn kind(&self) -> NormalizerKind {
        match self {
            Normalizer::Diag(_) => NormalizerKind::Diag,
            Normalizer::Box(_) => NormalizerKind::Box,
            Normalizer::InterOcular { .. } => NormalizerKind::InterOcular,
        }
    }

    /// Builds the normaliser for one sample from whichever aux data it needs.
    pub fn for_sample(kind: NormalizerKind, bbox: Option<[f64; 4]>, eyes: (usize, usize)) -> Result<Self> {
        let need_box = || bbox.ok_or_else(|| Error::input(format!("{} needs a ground-truth box", kind.label())));
        Ok(match kind {
            NormalizerKind::Diag => Normalizer::Diag(need_box()?),
            NormalizerKind::Box => Normalizer::Box(need_box()?),
            NormalizerKind::InterOcular => Normalizer::InterOcular { left: eyes.0, right: eyes.1 },
        })
    }

    pub fn distance(&self, gt: &[Point]) -> Result<f64> {
        let d = match *self {
            Normalizer::Diag(b) => (b[2] - b[0]).hypot(b[3] - b[1]),
            Normalizer::Box(b) => ((b[2] - b[0]) * (b[3] - b[1])).max(0.0).sqrt(),
            Normalizer::InterOcular { left, right } => {
                let (l, r) = match (gt.get(left), gt.get(right)) {
                    (Some(l), Some(r)) => (l, r),
                    _ => return Err(Error::input(format!("eye indices ({left}, {right}) out of range for {} points", gt.len()))),
                };
                (l[0] - r[0]).hypot(l[1] - r[1])
            }
        };
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::input(format!("{} normaliser is {d}", self.kind().label())));
        }
        Ok(d)
    }
}

/// Mean point-to-point distance divided by the normaliser, as a ratio.
pub fn nme(pred: &[Point], gt: &[Point], normalizer: &Normalizer) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!("{} predicted vs {} ground-truth landmarks", pred.len(), gt.len())));
    }
    if gt.is_empty() {
        return Err(Error::input("no landmarks"));
    }
    let d = normalizer.distance(gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).sum();
    Ok(total / gt.len() as f64 / d)
}

fn check_list(nmes: &[f64], tau: f64) -> Result<()> {
    if nmes.is_empty() {
        return Err(Error::input("empty error list"));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::input(format!("threshold must be positive, got {tau}")));
    }
    if let Some(bad) = nmes.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::input(format!("invalid error value {bad}")));
    }
    Ok(())
}

/// Percentage of samples with error above `tau`.
pub fn failure_rate(nmes: &[f64], tau: f64) -> Result<f64> {
    check_list(nmes, tau)?;
    Ok(100.0 * nmes.iter().filter(|&&e| e > tau).count() as f64 / nmes.len() as f64)
}

/// Area under the empirical cumulative error distribution on `[0, tau]`,
/// divided by `tau`, in percent.
///
/// Each sample contributes the length of `[e, tau]` on which it is counted,
/// so the step function is integrated exactly.
pub fn auc_ced(nmes: &[f64], tau: f64) -> Result<f64> {
    check_list(nmes, tau)?;
    let covered: f64 = nmes.iter().map(|&e| (tau - e).max(0.0)).sum();
    Ok((100.0 * covered / (nmes.len() as f64 * tau)).clamp(0.0, 100.0))
}

/// Sorted per-image errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CedCurve {
    errors: Vec<f64>,
}

impl CedCurve {
    pub fn new(mut errors: Vec<f64>) -> Result<Self> {
        check_list(&errors, 1.0)?;
        errors.sort_by(f64::total_cmp);
        Ok(Self { errors })
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    /// Fraction of samples with error at most `e`.
    pub fn fraction_within(&self, e: f64) -> f64 {
        self.errors.partition_point(|&x| x <= e) as f64 / self.errors.len() as f64
    }

    pub fn failure_rate(&self, tau: f64) -> Result<f64> {
        failure_rate(&self.errors, tau)
    }

    pub fn auc(&self, tau: f64) -> Result<f64> {
        auc_ced(&self.errors, tau)
    }
}
