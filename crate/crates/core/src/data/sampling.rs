use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::ManifestRecord;
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Picks one face uniformly among those in the record.
pub fn select_face<R: Rng + ?Sized>(record: &ManifestRecord, rng: &mut R) -> Result<Vec<Point>> {
    if record.face_count == 0 {
        return Err(Error::input(format!("{} has no face to select", record.image_ref)));
    }
    let faces = record.faces();
    if faces.len() != record.face_count {
        return Err(Error::input(format!("{}: face count disagrees with landmarks", record.image_ref)));
    }
    Ok(faces[rng.random_range(0..faces.len())].clone())
}

/// Ordered records plus the sampling parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T = ManifestRecord> {
    pub records: Vec<T>,
    pub seed: Option<u64>,
    pub fraction: f64,
}

impl<T> DatasetSplit<T> {
    pub fn full(records: Vec<T>) -> Self {
        Self { records, seed: None, fraction: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// `⌊fraction · n⌋` (at least one) for a fraction in `(0, 1]`.
pub fn fewshot_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input(format!("fraction {fraction} outside (0, 1]")));
    }
    // the epsilon absorbs representation error in products such as 0.1 · 30
    Ok(((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1)))
}

/// Uniform subset without replacement, kept in parent order.
pub fn fewshot_subset<T: Clone>(split: &DatasetSplit<T>, fraction: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if split.is_empty() {
        return Err(Error::input("cannot subsample an empty split"));
    }
    let n = split.len();
    let k = fewshot_count(n, fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(DatasetSplit {
        records: idx.into_iter().map(|i| split.records[i].clone()).collect(),
        seed: Some(seed),
        fraction: fraction * split.fraction,
    })
}

/// `round(ratio · size)` face records plus the rest from the non-face pool,
/// shuffled.
pub fn mix_face_ratio(
    face: &[ManifestRecord],
    nonface: &[ManifestRecord],
    ratio: f64,
    size: usize,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::input(format!("face ratio {ratio} outside [0, 1]")));
    }
    let n_face = (ratio * size as f64).round() as usize;
    let n_nonface = size - n_face;
    if face.len() < n_face {
        return Err(Error::input(format!(
            "face manifest has {} records but {n_face} are required",
            face.len()
        )));
    }
    if nonface.len() < n_nonface {
        return Err(Error::input(format!(
            "non-face manifest has {} records but {n_nonface} are required",
            nonface.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ManifestRecord> = rand::seq::index::sample(&mut rng, face.len(), n_face)
        .into_iter()
        .map(|i| face[i].clone())
        .collect();
    out.extend(
        rand::seq::index::sample(&mut rng, nonface.len(), n_nonface)
            .into_iter()
            .map(|i| nonface[i].clone()),
    );
    out.shuffle(&mut rng);
    Ok(out)
}
