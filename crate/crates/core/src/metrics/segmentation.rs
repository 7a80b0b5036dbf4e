//! Per-class F1 over label maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LabelMap;

/// Pixel counts per class; class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    /// Percent per class; `None` when the class appears in neither map.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined foreground classes.
    pub mean: Option<f64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes], pixels: 0 }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn pixels(&self) -> u64 {
        self.pixels
    }

    pub fn counts(&self, class: usize) -> (u64, u64, u64) {
        (self.tp[class], self.fp[class], self.fn_[class])
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::dim(format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let k = self.num_classes();
        if let Some(&bad) = pred.labels().iter().chain(gt.labels()).find(|&&l| l as usize >= k) {
            return Err(Error::input(format!("label {bad} out of range for {k} classes")));
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.tp[p as usize] += 1;
            } else {
                self.fp[p as usize] += 1;
                self.fn_[g as usize] += 1;
            }
        }
        self.pixels += pred.labels().len() as u64;
        Ok(())
    }

    /// Sums two accumulators; associative and commutative.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::input("cannot merge accumulators with different class counts"));
        }
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.pixels += other.pixels;
        Ok(())
    }

    pub fn scores(&self) -> F1Scores {
        let per_class: Vec<Option<f64>> = (0..self.num_classes())
            .map(|c| {
                let denom = 2 * self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| 100.0 * (2 * self.tp[c]) as f64 / denom as f64)
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().skip(1).flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        F1Scores { per_class, mean }
    }
}

pub fn f1_scores(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<F1Scores> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    acc.add(pred, gt)?;
    Ok(acc.scores())
}
