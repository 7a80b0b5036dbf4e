//! Scores prediction records against ground-truth records.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use facerep_core::data::TaskRecord;
use facerep_core::heads::TaskSpec;
use facerep_core::image::LabelMap;
use facerep_core::metrics::{
    accuracy_by_group, group_discrepancy, mean_accuracy, nme, AttributeAccumulator, AttributeReport, CedCurve,
    ConfusionAccumulator, GroupReport, LandmarkReport, MetricReport, Normalizer, SegmentationReport,
};
use facerep_core::{Error, Result};

use crate::config::EvalSettings;

/// Ground-truth records paired with their predictions, in ground-truth order.
fn pair<'a>(preds: &'a [TaskRecord], gts: &'a [TaskRecord]) -> Result<Vec<(&'a TaskRecord, &'a TaskRecord)>> {
    let by_id: HashMap<&str, &TaskRecord> = preds.iter().map(|r| (r.id.as_str(), r)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::input("duplicate ids among predictions"));
    }
    if gts.is_empty() {
        return Err(Error::input("no ground-truth records"));
    }
    gts.iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::input(format!("no prediction for {}", g.id)))
        })
        .collect()
}

fn field<'a, T>(v: &'a Option<T>, what: &str, id: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::input(format!("record {id} lacks {what}")))
}

pub fn evaluate(
    task: &TaskSpec,
    preds: &[TaskRecord],
    pred_base: &Path,
    gts: &[TaskRecord],
    gt_base: &Path,
    settings: &EvalSettings,
) -> Result<MetricReport> {
    let pairs = pair(preds, gts)?;
    let mut report = MetricReport::default();
    match task {
        TaskSpec::Parsing { classes } => {
            let mut acc = ConfusionAccumulator::new(*classes);
            for (p, g) in &pairs {
                let pm = LabelMap::load(&TaskRecord::resolve(pred_base, field(&p.labels, "labels", &p.id)?))?;
                let gm = LabelMap::load(&TaskRecord::resolve(gt_base, field(&g.labels, "labels", &g.id)?))?;
                acc.add(&pm, &gm)?;
            }
            let scores = acc.scores();
            let class_names = settings
                .class_names
                .clone()
                .unwrap_or_else(|| (0..*classes).map(|c| if c == 0 { "background".into() } else { format!("class{c}") }).collect());
            if class_names.len() != *classes {
                return Err(Error::config(format!("{} class names for {classes} classes", class_names.len())));
            }
            report.segmentation = Some(SegmentationReport { class_names, per_class: scores.per_class, mean_f1: scores.mean });
        }
        TaskSpec::Alignment { .. } => {
            let mut errors = Vec::with_capacity(pairs.len());
            for (p, g) in &pairs {
                let gp = field(&g.landmarks, "landmarks", &g.id)?;
                let pp = field(&p.landmarks, "landmarks", &p.id)?;
                let gt: Vec<_> = gp.chunks(2).map(|c| [c[0], c[1]]).collect();
                let pr: Vec<_> = pp.chunks(2).map(|c| [c[0], c[1]]).collect();
                let n = Normalizer::for_sample(settings.normalizer, g.bbox, settings.eyes)?;
                errors.push(nme(&pr, &gt, &n)?);
            }
            let curve = CedCurve::new(errors)?;
            report.landmarks = Some(LandmarkReport {
                normalizer: settings.normalizer,
                normalizer_definition: settings.normalizer.definition().into(),
                samples: curve.errors().len(),
                nme: curve.mean(),
                failure_threshold: settings.failure_threshold,
                failure_rate: curve.failure_rate(settings.failure_threshold)?,
                auc_threshold: settings.auc_threshold,
                auc: curve.auc(settings.auc_threshold)?,
            });
        }
        TaskSpec::Attributes { .. } => {
            let mut pv = Vec::with_capacity(pairs.len());
            let mut gv = Vec::with_capacity(pairs.len());
            for (p, g) in &pairs {
                pv.push(field(&p.attribute_bools(), "attributes", &p.id)?.clone());
                gv.push(field(&g.attribute_bools(), "attributes", &g.id)?.clone());
            }
            let acc = AttributeAccumulator::from_batch(&pv, &gv)?;
            report.attributes = Some(AttributeReport {
                samples: acc.samples(),
                mean_accuracy: mean_accuracy(&pv, &gv)?,
                per_attribute: acc.per_attribute(),
            });
            if pairs.iter().all(|(_, g)| g.group.is_some()) {
                let groups: Vec<String> = pairs.iter().map(|(_, g)| g.group.clone().unwrap_or_default()).collect();
                let accuracies = accuracy_by_group(&pv, &gv, &groups)?;
                let discrepancy = match &settings.reference_group {
                    Some(r) => {
                        let pooled = if settings.pooled_groups.is_empty() {
                            accuracies.keys().filter(|k| *k != r).cloned().collect()
                        } else {
                            settings.pooled_groups.clone()
                        };
                        Some(group_discrepancy(&accuracies, r, &pooled)?)
                    }
                    None => None,
                };
                report.groups = Some(GroupReport { accuracies: accuracies.into_iter().collect::<BTreeMap<_, _>>(), discrepancy });
            }
        }
    }
    report.validate()?;
    Ok(report)
}
