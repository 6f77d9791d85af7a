use std::path::Path;

use pestid_core::classify::{gradcam, predict, ConvNetClassifier, TrainConfig};
use pestid_core::evaluate::{generate_synthetic_dataset, SyntheticDataset, SyntheticSpec};
use pestid_core::pipeline::{run_pipeline, IdentificationService, PipelineConfig, RoiChoice, SplitConfig};
use pestid_core::roi::{extract_roi_crops, geometry};

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_fields: 4,
        n_classes: 4,
        images_per_cell: 20,
        confound_strength: 1.0,
        cue_size_px: 6,
        background_noise: 10.0,
        distractors: 0,
        image_side: 32,
        seed,
    }
}

fn trained_model(dir: &Path) -> std::path::PathBuf {
    generate_synthetic_dataset(&spec(0)).unwrap().write(&dir.join("data")).unwrap();
    let config = PipelineConfig {
        manifest: dir.join("data/manifest.jsonl"),
        image_root: None,
        taxonomy: None,
        cleanse: Default::default(),
        split: SplitConfig {
            test_fields: ["F04".to_string()].into(),
            ..SplitConfig::default()
        },
        scenario: None,
        roi: RoiChoice::GroundTruth {
            annotations: dir.join("data/annotations.jsonl"),
        },
        train: TrainConfig {
            input_side: 32,
            epochs: 20,
            batch_size: 16,
            ..TrainConfig::default()
        },
        output_dir: dir.join("run"),
    };
    let out = run_pipeline(&config).unwrap();
    assert!(out.report.micro_accuracy >= 0.9, "held-out accuracy {}", out.report.micro_accuracy);
    out.run_dir.join("model")
}

fn fresh_images() -> SyntheticDataset {
    generate_synthetic_dataset(&SyntheticSpec {
        n_fields: 1,
        images_per_cell: 5,
        ..spec(99)
    })
    .unwrap()
}

#[test]
fn identify_finds_one_roi_and_the_planted_class() {
    let tmp = tempfile::tempdir().unwrap();
    let service = IdentificationService::load(&trained_model(tmp.path())).unwrap();
    let ds = fresh_images();
    let mut correct = 0;
    for r in &ds.records {
        let out = service.identify(&ds.images[&r.record_id], 3).unwrap();
        assert_eq!(out.rois.len(), 1, "{}", r.record_id);
        let roi = &out.rois[0];
        assert_eq!(roi.top_k.len(), 3);
        let iou = geometry::mask_iou(&roi.polygon, &ds.polygons_by_record()[r.record_id.as_str()][0].vertices, 32, 32);
        assert!(iou >= 0.8, "{}: ROI IoU {iou}", r.record_id);
        correct += usize::from(roi.top_k[0].class_name == r.identity_class());
    }
    assert!(correct * 10 >= ds.records.len() * 9, "{correct}/{} correct", ds.records.len());
}

#[test]
fn gradcam_overlaps_the_planted_cue() {
    let tmp = tempfile::tempdir().unwrap();
    let (model, _) = ConvNetClassifier::load(&trained_model(tmp.path())).unwrap();
    let ds = fresh_images();
    let polygons = ds.polygons_by_record();
    let mut ious = Vec::new();
    for (id, (center, radius)) in &ds.cues {
        let (crop, img) = extract_roi_crops(&ds.images[id], &polygons[id.as_str()], 32).remove(0);
        let class = &predict(&model, &img).unwrap()[0].0;
        let map = gradcam(&model, &img, class).unwrap();
        let [cu, cv] = crop.from_source(center[0], center[1]);
        let r = radius * crop.scale;
        let in_cue = |u: usize, v: usize| {
            let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
            (x - cu).abs() <= r && (y - cv).abs() <= r
        };
        let mut sorted = map.data.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let cut = sorted[sorted.len() / 10];
        let (mut inter, mut union) = (0, 0);
        for v in 0..map.height {
            for u in 0..map.width {
                let hot = map.at(u, v) > cut || (map.at(u, v) == cut && cut > 0.0);
                let cue = in_cue(u, v);
                inter += usize::from(hot && cue);
                union += usize::from(hot || cue);
            }
        }
        ious.push(inter as f64 / union.max(1) as f64);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean >= 0.3, "mean top-decile IoU {mean:.3} over {} cues: {ious:.2?}", ious.len());
}

#[test]
fn two_leaves_in_frame_give_two_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let service = IdentificationService::load(&trained_model(tmp.path())).unwrap();
    let ds = fresh_images();
    let a = &ds.images[&ds.records[6].record_id];
    let b = &ds.images[&ds.records[12].record_id];
    let mut frame = image::RgbImage::new(64, 32);
    image::imageops::replace(&mut frame, a, 0, 0);
    image::imageops::replace(&mut frame, b, 32, 0);
    let out = service.identify(&frame, 1).unwrap();
    assert_eq!(out.rois.len(), 2);
    assert!(out.message.is_none());
}
