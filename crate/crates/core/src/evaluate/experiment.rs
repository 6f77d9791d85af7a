use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_report, EvalReport};
use super::synth::{generate_synthetic_dataset, SyntheticDataset, SyntheticSpec};
use crate::catalog::ImageRecord;
use crate::classes::{ClassScheme, Labels};
use crate::classify::{predict, train, ReferenceCnn, TrainConfig, TrainingData};
use crate::error::{Error, Result};
use crate::imaging::resize_bilinear;
use crate::roi::extract_roi_crops;
use crate::split::{audit_leakage, split_different_farm, split_same_farm_counts_by, Role, SplitAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentScenario {
    /// Same-farm vs different-farm split, equal test counts per class.
    Rq1SplitGap,
    /// ROI-masked crops vs raw images, both on a different-farm split.
    Rq2MaskGain,
}

impl fmt::Display for ExperimentScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentScenario::Rq1SplitGap => "rq1_split_gap",
            ExperimentScenario::Rq2MaskGain => "rq2_mask_gain",
        })
    }
}

impl FromStr for ExperimentScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "rq1_split_gap" | "rq1" => Ok(ExperimentScenario::Rq1SplitGap),
            "rq2_mask_gain" | "rq2" => Ok(ExperimentScenario::Rq2MaskGain),
            other => Err(Error::invalid(format!("unknown experiment {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentArm {
    pub name: String,
    pub n_train: usize,
    pub assignment_hash: String,
    pub report: EvalReport,
}

/// Two arms trained with the same budget. Deltas are `first - second`:
/// same-farm minus different-farm, or masked minus raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: ExperimentScenario,
    pub spec: SyntheticSpec,
    pub test_fields: Vec<String>,
    pub first: ExperimentArm,
    pub second: ExperimentArm,
    pub accuracy_delta: f64,
    pub macro_f1_delta: f64,
}

/// The last 40% of fields (at least one) are held out as test farms.
pub fn default_test_fields(spec: &SyntheticSpec) -> BTreeSet<String> {
    let ids = spec.field_ids();
    let n = ((ids.len() as f64 * 0.4).round() as usize).clamp(1, ids.len());
    ids[ids.len() - n..].iter().cloned().collect()
}

pub fn run_scenario_experiment(
    scenario: ExperimentScenario,
    spec: &SyntheticSpec,
    config: &TrainConfig,
) -> Result<ComparisonReport> {
    let ds = generate_synthetic_dataset(spec)?;
    run_on_dataset(scenario, spec, &ds, config, &ReferenceCnn::default())
}

pub fn run_on_dataset(
    scenario: ExperimentScenario,
    spec: &SyntheticSpec,
    ds: &SyntheticDataset,
    config: &TrainConfig,
    backend: &ReferenceCnn,
) -> Result<ComparisonReport> {
    let test_fields = default_test_fields(spec);
    if test_fields.len() == spec.n_fields {
        return Err(Error::invalid("experiments need at least two fields"));
    }
    let different = split_different_farm(&ds.records, &test_fields)?;
    let raw = input_images(ds, config.input_side, false);
    let (first, second) = match scenario {
        ExperimentScenario::Rq1SplitGap => {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in &ds.records {
                if different.role(&r.record_id) == Some(Role::Test) {
                    *counts.entry(r.identity_class()).or_default() += 1;
                }
            }
            let same = split_same_farm_counts_by(&ds.records, &counts, config.seed, ImageRecord::identity_class)?;
            let a = run_arm("same_farm", &ds.records, &same, &raw, config, backend)?;
            let b = run_arm("different_farm", &ds.records, &different, &raw, config, backend)?;
            (a, b)
        }
        ExperimentScenario::Rq2MaskGain => {
            let masked = input_images(ds, config.input_side, true);
            let a = run_arm("masked", &ds.records, &different, &masked, config, backend)?;
            let b = run_arm("raw", &ds.records, &different, &raw, config, backend)?;
            (a, b)
        }
    };
    Ok(ComparisonReport {
        scenario,
        spec: spec.clone(),
        test_fields: test_fields.into_iter().collect(),
        accuracy_delta: first.report.micro_accuracy - second.report.micro_accuracy,
        macro_f1_delta: first.report.macro_f1 - second.report.macro_f1,
        first,
        second,
    })
}

/// Model inputs per record: the whole frame, or the first ROI crop.
fn input_images(ds: &SyntheticDataset, side: u32, masked: bool) -> BTreeMap<String, RgbImage> {
    let polygons = ds.polygons_by_record();
    ds.records
        .par_iter()
        .filter_map(|r| {
            let img = &ds.images[&r.record_id];
            let out = if masked {
                let polys = polygons.get(r.record_id.as_str())?;
                extract_roi_crops(img, polys, side).into_iter().next()?.1
            } else if img.dimensions() == (side, side) {
                img.clone()
            } else {
                resize_bilinear(img, side, side)
            };
            Some((r.record_id.clone(), out))
        })
        .collect()
}

fn run_arm(
    name: &str,
    records: &[ImageRecord],
    assignment: &SplitAssignment,
    inputs: &BTreeMap<String, RgbImage>,
    config: &TrainConfig,
    backend: &ReferenceCnn,
) -> Result<ExperimentArm> {
    let certificate = audit_leakage(assignment, records).certificate()?;
    let usable = |role| {
        records
            .iter()
            .filter(move |r| assignment.role(&r.record_id) == Some(role) && inputs.contains_key(&r.record_id))
    };
    let classes: Vec<String> = usable(Role::Train)
        .map(ImageRecord::identity_class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let data = TrainingData {
        classes: classes.clone(),
        samples: usable(Role::Train)
            .map(|r| (inputs[&r.record_id].clone(), index[r.identity_class().as_str()]))
            .collect(),
        scheme_hash: ClassScheme::identity().hash(),
    };
    info!("{name}: training on {} images", data.samples.len());
    let (model, _, _) = train(&data, Some(&certificate), config, backend)?;

    let test: Vec<&ImageRecord> = usable(Role::Test).collect();
    let predicted: Vec<(String, String)> = test
        .par_iter()
        .map(|r| {
            let ranked = predict(&model, &inputs[&r.record_id])?;
            Ok((r.record_id.clone(), ranked[0].0.clone()))
        })
        .collect::<Result<_>>()?;
    let truth: Labels = test.iter().map(|r| (r.record_id.clone(), r.identity_class())).collect();
    let predictions: Labels = predicted.into_iter().collect();
    let evaluated: Vec<String> = classes.iter().filter(|c| truth.values().any(|t| t == *c)).cloned().collect();
    let mut report = compute_report(&truth, &predictions, &evaluated)?;
    report.split_policy = Some(assignment.policy);
    info!("{name}: accuracy {:.3}, macro F1 {:.3}", report.micro_accuracy, report.macro_f1);
    Ok(ExperimentArm {
        name: name.to_string(),
        n_train: data.samples.len(),
        assignment_hash: assignment.hash(),
        report,
    })
}
