use std::path::Path;

use serde::{Deserialize, Serialize};

use super::similarity::{estimate_similarity, Point, SimilarityTransform};
use crate::error::{Error, Result};

/// Five-point mean face (eye centres, nose tip, mouth corners) in a
/// `size × size` frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFace {
    pub size: usize,
    pub points: Vec<Point>,
}

impl Default for MeanFace {
    fn default() -> Self {
        toml::from_str(include_str!("../../assets/mean_face.toml")).expect("bundled template parses")
    }
}

impl MeanFace {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: MeanFace = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != 5 || self.size == 0 {
            return Err(Error::config("mean face needs five points and a positive frame size"));
        }
        Ok(())
    }

    /// Template points in an `s × s` frame.
    pub fn points_for(&self, s: usize) -> Vec<Point> {
        let t = SimilarityTransform::resize(self.size, s);
        self.points.iter().map(|&p| t.apply(p)).collect()
    }

    /// Alignment matrix taking detected landmarks onto the template in an
    /// `s × s` frame.
    pub fn alignment(&self, landmarks: &[Point], s: usize) -> Result<SimilarityTransform> {
        estimate_similarity(landmarks, &self.points_for(s))
    }
}

/// Averages several five-point annotations.
pub fn average_landmarks(faces: &[Vec<Point>]) -> Result<Vec<Point>> {
    let first = faces.first().ok_or_else(|| Error::input("no landmarks to average"))?;
    let mut acc = vec![[0.0; 2]; first.len()];
    for f in faces {
        if f.len() != acc.len() {
            return Err(Error::dim("landmark sets differ in length"));
        }
        for (a, p) in acc.iter_mut().zip(f) {
            a[0] += p[0];
            a[1] += p[1];
        }
    }
    let n = faces.len() as f64;
    Ok(acc.into_iter().map(|a| [a[0] / n, a[1] / n]).collect())
}
