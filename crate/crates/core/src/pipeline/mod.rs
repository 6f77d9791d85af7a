//! End-to-end orchestration with on-disk stage artifacts, and the
//! identification service used by the HTTP layer.

mod service;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ingest_manifest_with, ImageRecord, Taxonomy};
use crate::classes::{build_class_scheme, compose_cross_crop, ClassScheme, Labels, ScenarioConfig};
use crate::classify::{predict, train, ReferenceCnn, TrainConfig, TrainingData};
use crate::cleanse::{cleanse, CleanseConfig, PixelEmbedder};
use crate::error::{Error, Result};
use crate::evaluate::{compute_report, write_labels, EvalReport};
use crate::imaging::{resize_bilinear, save_png, FsImageSource, ImageSource};
use crate::jsonl;
use crate::roi::{
    detect_rois, extract_roi_crops_with_warnings, ForegroundThresholdSegmenter, PolygonAnnotation, RoiCrop,
};
use crate::split::{
    audit_leakage_by, split_date_fallback_by, split_different_farm_by, split_same_farm_by, Role, SplitAssignment,
    SplitPolicy, DEFAULT_DATE_FALLBACK_FRACTION,
};

pub use service::{ClassScore, IdentificationResult, IdentificationService, RoiIdentification, NO_ROI_FOUND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub policy: SplitPolicy,
    /// Same-farm test fraction, or the date-fallback target fraction.
    pub test_fraction: f64,
    pub test_fields: BTreeSet<String>,
    pub date_classes: BTreeSet<String>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            policy: SplitPolicy::DifferentFarm,
            test_fraction: DEFAULT_DATE_FALLBACK_FRACTION,
            test_fields: BTreeSet::new(),
            date_classes: BTreeSet::new(),
            seed: 0,
        }
    }
}

/// How ROIs are obtained before classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoiChoice {
    /// No ROI stage: whole frames resized to the model input.
    FullImage,
    /// Accepted polygons from an annotation file.
    GroundTruth { annotations: PathBuf },
    Threshold { segmenter: ForegroundThresholdSegmenter },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    /// Defaults to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    /// Defaults to the built-in taxonomy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub cleanse: CleanseConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// `None` keeps identity classes over every crop in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    pub roi: RoiChoice,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: PipelineConfig = jsonl::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.manifest);
        rebase(&mut config.output_dir);
        if let Some(p) = config.image_root.as_mut() {
            rebase(p);
        }
        if let Some(p) = config.taxonomy.as_mut() {
            rebase(p);
        }
        if let RoiChoice::GroundTruth { annotations } = &mut config.roi {
            rebase(annotations);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.manifest.is_file() {
            return Err(Error::invalid(format!("manifest {} not found", self.manifest.display())));
        }
        if let Some(t) = &self.taxonomy {
            if !t.is_file() {
                return Err(Error::invalid(format!("taxonomy {} not found", t.display())));
            }
        }
        if let RoiChoice::GroundTruth { annotations } = &self.roi {
            if !annotations.is_file() {
                return Err(Error::invalid(format!("annotations {} not found", annotations.display())));
            }
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if self.split.policy == SplitPolicy::DifferentFarm && self.split.test_fields.is_empty() {
            return Err(Error::invalid("different-farm split needs test_fields"));
        }
        self.train.validate()
    }

    /// Hash of everything that affects results; the output directory and
    /// absolute locations of inputs are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
        c.manifest = name(&c.manifest);
        c.image_root = None;
        c.taxonomy = c.taxonomy.as_deref().map(name);
        if let RoiChoice::GroundTruth { annotations } = &mut c.roi {
            *annotations = name(annotations);
        }
        jsonl::content_hash(&c)
    }

    fn image_root(&self) -> PathBuf {
        self.image_root
            .clone()
            .unwrap_or_else(|| self.manifest.parent().map(Path::to_path_buf).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub artifact: String,
    pub hash: String,
}

/// `provenance.json`: enough to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub split_seed: u64,
    pub train_seed: u64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    pub provenance: Provenance,
}

/// One model input derived from a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub sample_id: String,
    pub record_id: String,
    pub class: String,
    pub role: Role,
    pub donor: bool,
}

struct Run {
    dir: PathBuf,
    provenance: Provenance,
}

impl Run {
    fn record(&mut self, stage: &str, artifact: &str) -> Result<()> {
        let path = self.dir.join(artifact);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record_hash(stage, artifact, jsonl::bytes_hash(&bytes))
    }

    fn record_hash(&mut self, stage: &str, artifact: &str, hash: String) -> Result<()> {
        self.provenance.stages.push(StageRecord {
            stage: stage.to_string(),
            artifact: artifact.to_string(),
            hash,
        });
        jsonl::write_json(&self.dir.join("provenance.json"), &self.provenance)
    }
}

/// Runs ingest, cleanse, split, audit, class composition, ROI extraction,
/// training and evaluation, writing each stage's output into
/// `config.output_dir`. A failing stage is reported by name and leaves the
/// earlier artifacts in place.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut run = Run {
        dir: dir.clone(),
        provenance: Provenance {
            config_hash: config.hash(),
            split_seed: config.split.seed,
            train_seed: config.train.seed,
            stages: Vec::new(),
        },
    };
    jsonl::write_json(&dir.join("config.json"), config)?;
    // The file holds absolute paths; its location-free hash is recorded.
    run.record_hash("config", "config.json", run.provenance.config_hash.clone())?;

    // Ingest.
    let taxonomy = match &config.taxonomy {
        Some(p) => Taxonomy::load(p).map_err(|e| e.in_stage("ingest"))?,
        None => Taxonomy::seeded(),
    };
    let root = config.image_root();
    let ingest = ingest_manifest_with(&config.manifest, &root, taxonomy.clone()).map_err(|e| e.in_stage("ingest"))?;
    jsonl::write_lines(&dir.join("ingest_flags.jsonl"), &ingest.flagged)?;
    run.record("ingest", "ingest_flags.jsonl")?;
    let records = ingest.manifest.records;
    info!("ingested {} records ({} flagged)", records.len(), ingest.flagged.len());

    // Cleanse.
    let images = FsImageSource::new(&root);
    let report = cleanse(&records, &images, &PixelEmbedder::default(), &config.cleanse);
    report.write(&dir.join("cleanse_report.jsonl")).map_err(|e| e.in_stage("cleanse"))?;
    run.record("cleanse", "cleanse_report.jsonl")?;
    let kept: BTreeSet<&str> = report.kept.iter().map(String::as_str).collect();
    let records: Vec<ImageRecord> = records.into_iter().filter(|r| kept.contains(r.record_id.as_str())).collect();
    info!("cleanse kept {} records", records.len());

    // Class scheme, then split the target records under it.
    let scheme = match &config.scenario {
        Some(s) => build_class_scheme(&taxonomy, s).map_err(|e| e.in_stage("classes"))?,
        None => ClassScheme::identity(),
    };
    scheme.save(&dir.join("scheme.jsonl"))?;
    let (target, donors): (Vec<ImageRecord>, Vec<ImageRecord>) = match &config.scenario {
        Some(s) => records.into_iter().partition(|r| r.crop == s.target_crop),
        None => (records, Vec::new()),
    };
    let class_of = |r: &ImageRecord| scheme.class_of_record(r).unwrap_or_else(|_| r.identity_class());
    let assignment = split_records(&target, &config.split, &class_of).map_err(|e| e.in_stage("split"))?;
    assignment.save(&dir.join("split.jsonl"))?;
    run.record("split", "split.jsonl")?;

    let audit = audit_leakage_by(&assignment, &target, &class_of);
    jsonl::write_json(&dir.join("audit.json"), &audit)?;
    run.record("audit", "audit.json")?;
    let certificate = audit.certificate().map_err(|e| e.in_stage("audit"))?;

    // Composition.
    let by_role = |role| -> Vec<ImageRecord> {
        target
            .iter()
            .filter(|r| assignment.role(&r.record_id) == Some(role))
            .cloned()
            .collect()
    };
    let (train_records, test_records) = (by_role(Role::Train), by_role(Role::Test));
    let scenario = config.scenario.clone();
    let composed = match &scenario {
        Some(s) => compose_cross_crop(&train_records, &test_records, &donors, &scheme, s),
        None => compose_cross_crop(
            &train_records,
            &test_records,
            &[],
            &scheme,
            &ScenarioConfig::new(crate::classes::Scenario::Baseline, crate::catalog::Crop::Tomato),
        ),
    }
    .map_err(|e| e.in_stage("classes"))?;
    let donor_ids: BTreeSet<&str> = composed.donors.iter().map(|r| r.record_id.as_str()).collect();

    // ROI extraction.
    let side = config.train.input_side;
    let mut all: Vec<(&ImageRecord, Role, &String)> = Vec::new();
    for r in train_records.iter().chain(&composed.donors) {
        if let Some(c) = composed.train.get(&r.record_id) {
            all.push((r, Role::Train, c));
        }
    }
    for r in &test_records {
        if let Some(c) = composed.test.get(&r.record_id) {
            all.push((r, Role::Test, c));
        }
    }
    let roi_source = RoiSource::new(&config.roi).map_err(|e| e.in_stage("roi"))?;
    let crops_dir = dir.join("crops");
    let extracted: Vec<(Vec<(String, RgbImage, Option<RoiCrop>)>, Vec<String>)> = all
        .par_iter()
        .map(|(r, _, _)| {
            let img = images.load(r).map_err(|e| e.in_stage("roi"))?;
            Ok(roi_source.inputs(r, &img, side))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut crop_index = Vec::new();
    let mut roi_warnings = Vec::new();
    let mut samples: Vec<(DatasetRow, RgbImage)> = Vec::new();
    for ((r, role, class), (inputs, warnings)) in all.iter().zip(extracted) {
        if inputs.is_empty() {
            roi_warnings.push(format!("{}: no ROI, record skipped", r.record_id));
        }
        roi_warnings.extend(warnings);
        for (sample_id, img, crop) in inputs {
            if let Some(c) = crop {
                save_png(&img, &crops_dir.join(c.file_name()))?;
                crop_index.push(c);
            }
            let row = DatasetRow {
                sample_id,
                record_id: r.record_id.clone(),
                class: (*class).clone(),
                role: *role,
                donor: donor_ids.contains(r.record_id.as_str()),
            };
            rows.push(row.clone());
            samples.push((row, img));
        }
    }
    for w in &roi_warnings {
        warn!("{w}");
    }
    jsonl::write_lines(&crops_dir.join("index.jsonl"), &crop_index)?;
    jsonl::write_lines(&dir.join("roi_warnings.jsonl"), &roi_warnings)?;
    run.record("roi", "crops/index.jsonl")?;
    jsonl::write_lines(&dir.join("dataset.jsonl"), &rows)?;
    run.record("dataset", "dataset.jsonl")?;

    // Train.
    let classes: Vec<String> = samples
        .iter()
        .filter(|(row, _)| row.role == Role::Train)
        .map(|(row, _)| row.class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let data = TrainingData {
        classes: classes.clone(),
        samples: samples
            .iter()
            .filter(|(row, _)| row.role == Role::Train)
            .map(|(row, img)| (img.clone(), index[row.class.as_str()]))
            .collect(),
        scheme_hash: scheme.hash(),
    };
    let (model, meta, log) =
        train(&data, Some(&certificate), &config.train, &ReferenceCnn::default()).map_err(|e| e.in_stage("train"))?;
    model.save(&dir.join("model"), &meta)?;
    jsonl::write_lines(&dir.join("train_log.jsonl"), &log.epochs)?;
    run.record("train", "model/model.json")?;

    // Evaluate.
    let test: Vec<&(DatasetRow, RgbImage)> = samples.iter().filter(|(row, _)| row.role == Role::Test).collect();
    let predicted: Vec<(String, String)> = test
        .par_iter()
        .map(|(row, img)| Ok((row.sample_id.clone(), predict(&model, img)?[0].0.clone())))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("evaluate"))?;
    let truth: Labels = test.iter().map(|(row, _)| (row.sample_id.clone(), row.class.clone())).collect();
    let predictions: Labels = predicted.into_iter().collect();
    let evaluated: Vec<String> = classes
        .iter()
        .filter(|c| !assignment.train_only_classes.contains(*c) && truth.values().any(|t| t == *c))
        .cloned()
        .collect();
    let mut report = compute_report(&truth, &predictions, &evaluated).map_err(|e| e.in_stage("evaluate"))?;
    report.split_policy = Some(assignment.policy);
    write_labels(&dir.join("truth.jsonl"), &truth)?;
    write_labels(&dir.join("predictions.jsonl"), &predictions)?;
    jsonl::write_json(&dir.join("eval_report.json"), &report)?;
    run.record("evaluate", "eval_report.json")?;
    info!(
        "{} test samples: accuracy {:.3}, macro F1 {:.3}",
        report.n_test, report.micro_accuracy, report.macro_f1
    );
    Ok(RunOutcome {
        run_dir: dir,
        report,
        provenance: run.provenance,
    })
}

fn split_records<F>(records: &[ImageRecord], config: &SplitConfig, class_of: F) -> Result<SplitAssignment>
where
    F: Fn(&ImageRecord) -> String,
{
    match config.policy {
        SplitPolicy::SameFarmRandom => split_same_farm_by(records, config.test_fraction, config.seed, class_of),
        SplitPolicy::DifferentFarm => split_different_farm_by(records, &config.test_fields, class_of),
        SplitPolicy::DateFallback => split_date_fallback_by(
            records,
            &config.date_classes,
            config.test_fraction,
            &config.test_fields,
            class_of,
        ),
    }
}

enum RoiSource {
    FullImage,
    GroundTruth(BTreeMap<String, Vec<PolygonAnnotation>>),
    Threshold(ForegroundThresholdSegmenter),
}

impl RoiSource {
    fn new(choice: &RoiChoice) -> Result<Self> {
        Ok(match choice {
            RoiChoice::FullImage => RoiSource::FullImage,
            RoiChoice::GroundTruth { annotations } => {
                let mut by_record: BTreeMap<String, Vec<PolygonAnnotation>> = BTreeMap::new();
                for a in jsonl::read_lines::<PolygonAnnotation>(annotations)? {
                    if a.is_trainable() {
                        by_record.entry(a.record_id.clone()).or_default().push(a);
                    }
                }
                RoiSource::GroundTruth(by_record)
            }
            RoiChoice::Threshold { segmenter } => RoiSource::Threshold(segmenter.clone()),
        })
    }

    /// `(sample_id, model input, crop geometry)` per ROI, plus warnings.
    #[allow(clippy::type_complexity)]
    fn inputs(&self, record: &ImageRecord, image: &RgbImage, side: u32) -> (Vec<(String, RgbImage, Option<RoiCrop>)>, Vec<String>) {
        let polygons = match self {
            RoiSource::FullImage => {
                let img = if image.dimensions() == (side, side) {
                    image.clone()
                } else {
                    resize_bilinear(image, side, side)
                };
                return (vec![(record.record_id.clone(), img, None)], Vec::new());
            }
            RoiSource::GroundTruth(map) => map.get(&record.record_id).cloned().unwrap_or_default(),
            RoiSource::Threshold(seg) => detect_rois(&record.record_id, image, seg).proposals,
        };
        let (crops, warnings) = extract_roi_crops_with_warnings(image, &polygons, side);
        let out = crops.into_iter().map(|(c, img)| (c.crop_id.clone(), img, Some(c))).collect();
        (out, warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{generate_synthetic_dataset, SyntheticSpec};

    fn fixture(dir: &Path, roi: bool) -> PipelineConfig {
        let spec = SyntheticSpec {
            n_fields: 3,
            n_classes: 2,
            images_per_cell: 6,
            image_side: 24,
            ..SyntheticSpec::default()
        };
        generate_synthetic_dataset(&spec).unwrap().write(&dir.join("data")).unwrap();
        PipelineConfig {
            manifest: dir.join("data/manifest.jsonl"),
            image_root: None,
            taxonomy: None,
            cleanse: CleanseConfig::default(),
            split: SplitConfig {
                test_fields: ["F03".to_string()].into(),
                ..SplitConfig::default()
            },
            scenario: None,
            roi: if roi {
                RoiChoice::GroundTruth {
                    annotations: dir.join("data/annotations.jsonl"),
                }
            } else {
                RoiChoice::FullImage
            },
            train: TrainConfig {
                input_side: 16,
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            output_dir: dir.join("run"),
        }
    }

    #[test]
    fn writes_every_stage_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let config = fixture(tmp.path(), true);
        let out = run_pipeline(&config).unwrap();
        for f in [
            "config.json",
            "cleanse_report.jsonl",
            "split.jsonl",
            "audit.json",
            "dataset.jsonl",
            "crops/index.jsonl",
            "model/model.json",
            "model/weights.bin",
            "eval_report.json",
            "provenance.json",
        ] {
            assert!(out.run_dir.join(f).is_file(), "{f}");
        }
        assert_eq!(out.report.n_test, 12);
        assert_eq!(out.report.split_policy, Some(SplitPolicy::DifferentFarm));
        let stages: Vec<&str> = out.provenance.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(stages, ["config", "ingest", "cleanse", "split", "audit", "roi", "dataset", "train", "evaluate"]);
    }

    #[test]
    fn same_farm_runs_and_is_labelled() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = fixture(tmp.path(), false);
        config.split = SplitConfig {
            policy: SplitPolicy::SameFarmRandom,
            test_fraction: 0.25,
            ..SplitConfig::default()
        };
        let out = run_pipeline(&config).unwrap();
        assert_eq!(out.report.split_policy, Some(SplitPolicy::SameFarmRandom));
        let text = fs::read_to_string(out.run_dir.join("eval_report.json")).unwrap();
        assert!(text.contains("same_farm_random"));
    }

    #[test]
    fn failing_stage_is_named_and_earlier_artifacts_stay() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = fixture(tmp.path(), false);
        config.split.test_fields = ["F01".into(), "F02".into(), "F03".into()].into();
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "train", .. }), "{err}");
        assert!(config.output_dir.join("cleanse_report.jsonl").is_file());
        assert!(config.output_dir.join("audit.json").is_file());
    }

    #[test]
    fn config_hash_ignores_output_location() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fixture(tmp.path(), false);
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
