//! Attribute accuracy and accuracy gaps between demographic groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-attribute accuracy averaged over attributes, in percent.
pub fn mean_accuracy(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<f64> {
    Ok(AttributeAccumulator::from_batch(pred, gt)?.mean_accuracy())
}

/// Correct-prediction counts per attribute; mergeable across shards.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeAccumulator {
    correct: Vec<u64>,
    samples: u64,
}

impl AttributeAccumulator {
    pub fn from_batch(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<Self> {
        let mut acc = Self::default();
        acc.add(pred, gt)?;
        if acc.samples == 0 {
            return Err(Error::input("empty attribute batch"));
        }
        Ok(acc)
    }

    pub fn add(&mut self, pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::dim(format!("{} predictions vs {} labels", pred.len(), gt.len())));
        }
        for (p, g) in pred.iter().zip(gt) {
            if p.len() != g.len() || p.is_empty() {
                return Err(Error::dim(format!("attribute vectors of length {} vs {}", p.len(), g.len())));
            }
            if self.samples == 0 && self.correct.is_empty() {
                self.correct = vec![0; g.len()];
            }
            if g.len() != self.correct.len() {
                return Err(Error::dim(format!("expected {} attributes, got {}", self.correct.len(), g.len())));
            }
            for (c, (a, b)) in self.correct.iter_mut().zip(p.iter().zip(g)) {
                *c += u64::from(a == b);
            }
            self.samples += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.samples == 0 {
            *self = other.clone();
            return Ok(());
        }
        if other.samples == 0 {
            return Ok(());
        }
        if other.correct.len() != self.correct.len() {
            return Err(Error::dim("attribute counts differ"));
        }
        for (a, b) in self.correct.iter_mut().zip(&other.correct) {
            *a += b;
        }
        self.samples += other.samples;
        Ok(())
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn per_attribute(&self) -> Vec<f64> {
        self.correct.iter().map(|&c| 100.0 * c as f64 / self.samples.max(1) as f64).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        let per = self.per_attribute();
        if per.is_empty() {
            return 0.0;
        }
        per.iter().sum::<f64>() / per.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    /// Percent.
    pub accuracy: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub reference: String,
    pub reference_accuracy: f64,
    pub pooled: Vec<String>,
    pub pooled_accuracy: f64,
    /// `pooled_accuracy − reference_accuracy`.
    pub difference: f64,
}

/// Sample-weighted accuracy of the pooled groups minus the reference
/// group's accuracy.
pub fn group_discrepancy(groups: &BTreeMap<String, GroupAccuracy>, reference: &str, pooled: &[String]) -> Result<Discrepancy> {
    let get = |name: &str| -> Result<GroupAccuracy> {
        let g = groups.get(name).ok_or_else(|| Error::input(format!("group {name:?} not present")))?;
        if g.samples == 0 {
            return Err(Error::input(format!("group {name:?} is empty")));
        }
        Ok(*g)
    };
    if pooled.is_empty() {
        return Err(Error::input("no groups to pool"));
    }
    let r = get(reference)?;
    let mut weighted = 0.0;
    let mut n = 0u64;
    for name in pooled {
        let g = get(name)?;
        weighted += g.accuracy * g.samples as f64;
        n += g.samples;
    }
    let pooled_accuracy = weighted / n as f64;
    Ok(Discrepancy {
        reference: reference.to_string(),
        reference_accuracy: r.accuracy,
        pooled: pooled.to_vec(),
        pooled_accuracy,
        difference: pooled_accuracy - r.accuracy,
    })
}

/// Per-group mean accuracy from aligned prediction, label and group lists.
pub fn accuracy_by_group(pred: &[Vec<bool>], gt: &[Vec<bool>], groups: &[String]) -> Result<BTreeMap<String, GroupAccuracy>> {
    if groups.len() != gt.len() || pred.len() != gt.len() {
        return Err(Error::dim("predictions, labels and groups must align"));
    }
    let mut accs: BTreeMap<String, AttributeAccumulator> = BTreeMap::new();
    for ((p, g), name) in pred.iter().zip(gt).zip(groups) {
        accs.entry(name.clone()).or_default().add(std::slice::from_ref(p), std::slice::from_ref(g))?;
    }
    Ok(accs
        .into_iter()
        .map(|(k, a)| (k, GroupAccuracy { accuracy: a.mean_accuracy(), samples: a.samples() }))
        .collect())
}
