//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use pestid_core::augment::{draw_lambda, AugmentationConfig, GeometricOps, MixupMode};
use pestid_core::catalog::{Crop, ImageRecord, Portion, Taxonomy, Timestamp};
use pestid_core::classes::{
    apply_scheme, build_class_scheme, class_counts, compose_cross_crop, Labels, Scenario, ScenarioConfig,
};
use pestid_core::classify::TrainConfig;
use pestid_core::evaluate::{
    compute_report, f1_score, generate_synthetic_dataset, report_from_confusion, run_on_dataset, ExperimentScenario,
    SyntheticSpec,
};
use pestid_core::pipeline::{run_pipeline, PipelineConfig, RoiChoice, SplitConfig};
use pestid_core::roi::{extract_roi_crops, geometry, PolygonAnnotation};
use pestid_core::split::{audit_leakage, split_different_farm, Role};

// Tolerances.
const F1_TOL_PP: f64 = 0.1;
const AUG_FREQ_TOL: f64 = 0.02;
const MIXUP_MEAN_TOL: f64 = 0.01;
const BETA_TAIL_TOL: f64 = 0.02;
const RQ1_MIN_GAP: f64 = 0.10;
const RQ1_MAX_NULL_GAP: f64 = 0.03;
const PAD_TOL_PX: u32 = 1;
const ROUND_TRIP_TOL_PX: f64 = 1.0;

type Check = Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("metric fixtures", metric_fixtures),
        ("class composition counts", composition_counts),
        ("leakage properties", leakage_properties),
        ("roi geometry properties", roi_geometry),
        ("augmentation distribution", augmentation_distribution),
        ("rq1 split gap", rq1_split_gap),
        ("rq2 mask gain", rq2_mask_gain),
        ("metrics brute-force oracle", metrics_oracle),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Published (precision, recall) → F1, all in percent.
fn metric_fixtures() -> Check {
    let fixtures = [(23.3, 83.1, 36.4), (28.3, 84.3, 42.4), (93.8, 92.3, 93.0)];
    let mut worst: f64 = 0.0;
    for (p, r, f1) in fixtures {
        let direct = 100.0 * f1_score(p / 100.0, r / 100.0);
        // The same pair through the report builder, from counts that give
        // the published precision and recall.
        let tp = (r * 10.0).round() as u64;
        let fn_ = 1000 - tp;
        let fp = (tp as f64 * (100.0 / p - 1.0)).round() as u64;
        let report = report_from_confusion(
            names(&["target", "other"]),
            vec![vec![tp, fn_], vec![fp, 5000]],
            &names(&["target"]),
        );
        let via_report = 100.0 * report.per_class[0].f1;
        for got in [direct, via_report] {
            worst = worst.max((got - f1).abs());
            ensure((got - f1).abs() <= F1_TOL_PP, || format!("P={p} R={r}: F1 {got:.3}, expected {f1}"))?;
        }
    }
    Ok(format!("3 fixtures, max deviation {worst:.3} pp"))
}

fn records(prefix: &str, label: &str, portion: Portion, crop: Crop, n: usize) -> Vec<ImageRecord> {
    let at = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
    (0..n)
        .map(|i| ImageRecord {
            record_id: format!("{prefix}-{i}"),
            uri: format!("{prefix}-{i}.jpg"),
            crop,
            portion,
            pest_label: label.to_string(),
            field_id: "f".into(),
            captured_at: Timestamp(at),
            device_id: None,
            width_px: 1024,
            height_px: 1024,
        })
        .collect()
}

fn count_for(labels: &Labels, class: &str) -> usize {
    class_counts(labels).get(class).copied().unwrap_or(0)
}

/// Merged training and test counts of the class-definition experiment.
fn composition_counts() -> Check {
    use Crop::{Cucumber, Eggplant, Strawberry, Tomato};
    let leaf = Portion::LeafFront;
    let taxonomy = Taxonomy::seeded();

    let cucumber = |split: &str, counts: [usize; 7]| {
        let labels = [
            "broad mite",
            "Kanzawa spider mite",
            "twospotted spider mite",
            "tobacco whitefly",
            "cotton aphid",
            "melon thrips",
            "healthy",
        ];
        labels
            .iter()
            .zip(counts)
            .flat_map(|(l, n)| records(&format!("c-{split}-{l}"), l, leaf, Cucumber, n))
            .collect::<Vec<_>>()
    };
    let c_train = cucumber("train", [1031, 1452, 3173, 5353, 2056, 3332, 17010]);
    let c_test = cucumber("test", [823, 1141, 230, 1435, 222, 319, 1358]);
    let mut donors = Vec::new();
    donors.extend(records("d-h-t", "healthy", leaf, Tomato, 20000));
    donors.extend(records("d-h-s", "healthy", leaf, Strawberry, 9000));
    donors.extend(records("d-h-e", "healthy", leaf, Eggplant, 5709));
    donors.extend(records("d-tsm-e", "twospotted spider mite", leaf, Eggplant, 3000));
    donors.extend(records("d-tsm-s", "twospotted spider mite", leaf, Strawberry, 1681));
    donors.extend(records("d-thr-e", "melon thrips", leaf, Eggplant, 9354));
    // Not in any donor class; must never be added.
    donors.extend(records("d-bm-e", "broad mite", leaf, Eggplant, 500));

    let scenario = |s: Scenario, donor_classes: &[&str]| {
        let mut c = ScenarioConfig::new(s, Cucumber);
        if s.is_cross_crop() {
            c.donor_crops = [Tomato, Strawberry, Eggplant].into();
            c.donor_classes = donor_classes.iter().map(|s| s.to_string()).collect();
        }
        c
    };
    let compose = |config: &ScenarioConfig| {
        let scheme = build_class_scheme(&taxonomy, config).map_err(|e| e.to_string())?;
        compose_cross_crop(&c_train, &c_test, &donors, &scheme, config).map_err(|e| e.to_string())
    };
    let healthy = "healthy (leaf_cucumber)";
    let tsm = "twospotted spider mite (leaf_cucumber)";
    let thrips = "melon thrips (leaf_cucumber)";

    let mut checks: Vec<(&str, usize, usize)> = Vec::new();
    let integ = compose(&scenario(Scenario::Integration, &[]))?;
    checks.push(("A spider mite train", count_for(&integ.train, "spider mite"), 4625));
    checks.push(("A spider mite test", count_for(&integ.test, "spider mite"), 1371));
    let b1 = compose(&scenario(Scenario::CrossCropHealthy, &[]))?;
    checks.push(("B1 healthy train", count_for(&b1.train, healthy), 51719));
    checks.push(("B1 total train", b1.train.len(), 68116));
    let b2 = compose(&scenario(Scenario::CrossCropFull, &[healthy, tsm, thrips]))?;
    checks.push(("B2 TSM train", count_for(&b2.train, tsm), 7854));
    checks.push(("B2 thrips train", count_for(&b2.train, thrips), 12686));
    checks.push(("B2 healthy train", count_for(&b2.train, healthy), 51719));
    checks.push(("B2 total train", b2.train.len(), 82151));
    let c = compose(&scenario(Scenario::Combined, &["healthy (leaf_cucumber)", "spider mite", "thrips"]))?;
    checks.push(("C spider mite train", count_for(&c.train, "spider mite"), 9306));
    checks.push(("C thrips train", count_for(&c.train, "thrips"), 12686));
    checks.push(("C healthy train", count_for(&c.train, healthy), 51719));
    checks.push(("C total train", c.train.len(), 82151));
    checks.push(("C test total", c.test.len(), 5528));

    let eggplant = |split: &str, counts: [usize; 4]| {
        ["Kanzawa spider mite", "twospotted spider mite", "cotton aphid", "green peach aphid"]
            .iter()
            .zip(counts)
            .flat_map(|(l, n)| records(&format!("e-{split}-{l}"), l, leaf, Eggplant, n))
            .collect::<Vec<_>>()
    };
    let e_scheme = build_class_scheme(&taxonomy, &ScenarioConfig::new(Scenario::Integration, Eggplant))
        .map_err(|e| e.to_string())?;
    let e_train = apply_scheme(&eggplant("train", [1900, 1274, 2458, 4267]), &e_scheme).map_err(|e| e.to_string())?;
    let e_test = apply_scheme(&eggplant("test", [379, 113, 208, 311]), &e_scheme).map_err(|e| e.to_string())?;
    checks.push(("eggplant spider mite train", count_for(&e_train, "spider mite"), 3174));
    checks.push(("eggplant aphid train", count_for(&e_train, "aphid"), 6725));
    checks.push(("eggplant spider mite test", count_for(&e_test, "spider mite"), 492));
    checks.push(("eggplant aphid test", count_for(&e_test, "aphid"), 519));

    for (what, got, want) in &checks {
        ensure(got == want, || format!("{what}: {got}, expected {want}"))?;
    }
    Ok(format!("{} merged counts exact", checks.len()))
}

fn random_manifest(rng: &mut ChaCha8Rng) -> Vec<ImageRecord> {
    let labels = ["healthy", "broad mite", "cotton aphid", "melon thrips", "hadda beetle"];
    let n_fields = rng.random_range(2..8);
    let n = rng.random_range(5..120);
    let base = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..n)
        .map(|i| ImageRecord {
            record_id: format!("r{i:04}"),
            uri: format!("r{i}.jpg"),
            crop: Crop::Eggplant,
            portion: Portion::LeafFront,
            pest_label: labels[rng.random_range(0..labels.len())].to_string(),
            field_id: format!("f{}", rng.random_range(0..n_fields)),
            captured_at: Timestamp(base + chrono::Duration::hours(rng.random_range(0..2000))),
            device_id: None,
            width_px: 64,
            height_px: 64,
        })
        .collect()
}

fn leakage_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut clean, mut corrupted, mut detected) = (0, 0, 0);
    for _ in 0..1000 {
        let records = random_manifest(&mut rng);
        let mut fields: Vec<String> = records.iter().map(|r| r.field_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        fields.shuffle(&mut rng);
        let k = rng.random_range(1..=fields.len());
        let test_fields: BTreeSet<String> = fields[..k].iter().cloned().collect();
        let assignment = split_different_farm(&records, &test_fields).map_err(|e| e.to_string())?;
        let audit = audit_leakage(&assignment, &records);
        ensure(audit.is_clean(), || format!("clean split flagged: {:?}", audit.violations))?;
        clean += 1;

        // Put two records of one field on opposite sides.
        let mut by_field: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &records {
            if matches!(assignment.role(&r.record_id), Some(Role::Train | Role::Test)) {
                by_field.entry(&r.field_id).or_default().push(&r.record_id);
            }
        }
        if let Some(ids) = by_field.values().find(|ids| ids.len() >= 2) {
            let mut bad = assignment.clone();
            bad.assignment.insert(ids[0].to_string(), Role::Train);
            bad.assignment.insert(ids[1].to_string(), Role::Test);
            corrupted += 1;
            detected += usize::from(!audit_leakage(&bad, &records).is_clean());
        }
        // Drop one record from the assignment.
        let mut missing = assignment.clone();
        missing.assignment.remove(&records[0].record_id);
        corrupted += 1;
        detected += usize::from(!audit_leakage(&missing, &records).is_clean());
    }
    ensure(detected == corrupted, || format!("{detected}/{corrupted} corruptions detected"))?;
    Ok(format!("{clean} clean splits, {detected}/{corrupted} corruptions detected"))
}

fn star_polygon(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Vec<[f64; 2]> {
    let n = rng.random_range(3..12);
    let c = [
        rng.random_range(0.3..0.7) * f64::from(w),
        rng.random_range(0.3..0.7) * f64::from(h),
    ];
    let rmax = (c[0].min(f64::from(w) - c[0])).min(c[1].min(f64::from(h) - c[1]));
    let step = std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|i| {
            let a = step * (i as f64 + 0.8 * rng.random::<f64>());
            let r = rmax * rng.random_range(0.2..1.0);
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        })
        .collect()
}

fn roi_geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 500 {
        let (w, h) = (rng.random_range(16..160), rng.random_range(16..160));
        let side = rng.random_range(8..96);
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 250 + 5) as u8, (y % 250 + 5) as u8, 255]));
        let n_polys = rng.random_range(1..4);
        let polys: Vec<PolygonAnnotation> = (0..n_polys)
            .map(|k| PolygonAnnotation::human(format!("a{k}"), "r", star_polygon(&mut rng, w, h)))
            .filter(|p| p.validate(w, h).is_ok())
            .collect();
        if polys.is_empty() {
            continue;
        }
        let crops = extract_roi_crops(&img, &polys, side);
        ensure(crops.len() == polys.len(), || format!("{} polygons gave {} crops", polys.len(), crops.len()))?;
        for ((info, out), poly) in crops.iter().zip(&polys) {
            checked += 1;
            let (l, t, r, b) = info.pad;
            ensure(l.abs_diff(r) <= PAD_TOL_PX && t.abs_diff(b) <= PAD_TOL_PX, || format!("asymmetric pad {:?}", info.pad))?;
            for v in 0..side {
                for u in 0..side {
                    let [sx, sy] = info.to_source(f64::from(u) + 0.5, f64::from(v) + 0.5);
                    if !geometry::contains(&poly.vertices, sx, sy) && out.get_pixel(u, v).0 != [0, 0, 0] {
                        return Err(format!("pixel ({u},{v}) outside polygon is not black"));
                    }
                }
            }
            for p in &poly.vertices {
                let [u, v] = info.from_source(p[0], p[1]);
                let [x, y] = info.to_source(u, v);
                ensure((x - p[0]).abs() <= ROUND_TRIP_TOL_PX && (y - p[1]).abs() <= ROUND_TRIP_TOL_PX, || {
                    format!("round trip {p:?} -> {:?}", [x, y])
                })?;
            }
        }
    }
    Ok(format!("{checked} random polygons"))
}

fn augmentation_distribution() -> Check {
    const N: usize = 10_000;
    let config = AugmentationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut h, mut v) = (0usize, 0usize);
    let mut turns = [0usize; 4];
    for _ in 0..N {
        let ops = GeometricOps::draw(&config, &mut rng);
        h += usize::from(ops.hflip);
        v += usize::from(ops.vflip);
        turns[ops.quarter_turns as usize] += 1;
    }
    let freq = |c: usize| c as f64 / N as f64;
    ensure((freq(h) - 0.5).abs() <= AUG_FREQ_TOL, || format!("hflip {:.4}", freq(h)))?;
    ensure((freq(v) - 0.5).abs() <= AUG_FREQ_TOL, || format!("vflip {:.4}", freq(v)))?;
    for (k, &c) in turns.iter().enumerate() {
        ensure((freq(c) - 0.25).abs() <= AUG_FREQ_TOL, || format!("rotation {k}: {:.4}", freq(c)))?;
    }

    let lambdas: Vec<f64> = (0..N).map(|_| draw_lambda(MixupMode::Beta, 0.2, &mut rng)).collect();
    let mean = lambdas.iter().sum::<f64>() / N as f64;
    ensure((mean - 0.5).abs() <= MIXUP_MEAN_TOL, || format!("mixup mean {mean:.4}"))?;
    let beta = Beta::new(0.2, 0.2).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for x in [0.01, 0.05, 0.1, 0.9, 0.95, 0.99] {
        let empirical = lambdas.iter().filter(|&&l| l <= x).count() as f64 / N as f64;
        let diff = (empirical - beta.cdf(x)).abs();
        worst = worst.max(diff);
        ensure(diff <= BETA_TAIL_TOL, || format!("CDF at {x}: {empirical:.4} vs {:.4}", beta.cdf(x)))?;
    }
    Ok(format!(
        "hflip {:.3}, vflip {:.3}, rotations {:?}, mixup mean {mean:.4}, max CDF gap {worst:.4}",
        freq(h),
        freq(v),
        turns.map(freq)
    ))
}

fn experiment_config() -> TrainConfig {
    TrainConfig {
        input_side: 32,
        epochs: 20,
        batch_size: 16,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

fn experiment_spec(confound: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_fields: 5,
        n_classes: 4,
        images_per_cell: 40,
        confound_strength: confound,
        cue_size_px: 6,
        background_noise: 10.0,
        distractors: 0,
        image_side: 32,
        seed: 0,
    }
}

fn rq1_split_gap() -> Check {
    let run = |confound: f64| -> Result<(f64, f64, f64), String> {
        let spec = experiment_spec(confound);
        let ds = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
        let r = run_on_dataset(ExperimentScenario::Rq1SplitGap, &spec, &ds, &experiment_config(), &Default::default())
            .map_err(|e| e.to_string())?;
        Ok((r.first.report.micro_accuracy, r.second.report.micro_accuracy, r.accuracy_delta))
    };
    let (same, diff, gap) = run(1.0)?;
    let (same0, diff0, gap0) = run(0.0)?;
    let detail = format!(
        "confound 1.0: same-farm {same:.3} vs different-farm {diff:.3} (gap {:.1} pts); confound 0: {same0:.3} vs {diff0:.3} (gap {:.1} pts)",
        gap * 100.0,
        gap0 * 100.0
    );
    ensure(gap >= RQ1_MIN_GAP && gap0.abs() < RQ1_MAX_NULL_GAP, || detail.clone())?;
    Ok(detail)
}

fn rq2_mask_gain() -> Check {
    let spec = SyntheticSpec {
        background_noise: 30.0,
        distractors: 3,
        ..experiment_spec(1.0)
    };
    let ds = generate_synthetic_dataset(&spec).map_err(|e| e.to_string())?;
    let r = run_on_dataset(ExperimentScenario::Rq2MaskGain, &spec, &ds, &experiment_config(), &Default::default())
        .map_err(|e| e.to_string())?;
    let (masked, raw) = (r.first.report.micro_accuracy, r.second.report.micro_accuracy);
    let detail = format!(
        "masked {masked:.3} vs raw {raw:.3} on {} different-farm test images (macro F1 delta {:+.3})",
        r.first.report.n_test, r.macro_f1_delta
    );
    ensure(masked >= raw, || detail.clone())?;
    Ok(detail)
}

/// Straight-line reimplementation used as the oracle.
struct Naive {
    confusion: Vec<Vec<u64>>,
    per_class: Vec<(f64, f64, f64, u64)>,
    accuracy: f64,
    macro_f1: f64,
}

fn naive_report(truth: &[(String, String)], pred: &BTreeMap<String, String>, order: &[String], evaluated: &[String]) -> Naive {
    let idx = |c: &str| order.iter().position(|o| o == c).unwrap();
    let mut confusion = vec![vec![0u64; order.len()]; order.len()];
    let mut correct = 0u64;
    for (id, t) in truth {
        let p = &pred[id];
        confusion[idx(t)][idx(p)] += 1;
        if t == p {
            correct += 1;
        }
    }
    let mut per_class = Vec::new();
    let (mut sum, mut count) = (0.0, 0usize);
    for c in evaluated {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (id, t) in truth {
            let p = &pred[id];
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        if tp + fn_ > 0 {
            sum += f1;
            count += 1;
        }
        per_class.push((precision, recall, f1, tp + fn_));
    }
    Naive {
        confusion,
        per_class,
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        macro_f1: if count == 0 { 0.0 } else { sum / count as f64 },
    }
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool = names(&["a", "b", "c", "d", "e", "f"]);
    for draw in 0..1000 {
        let k = rng.random_range(1..=pool.len());
        let classes = &pool[..k];
        let n = rng.random_range(1..80);
        let truth: Vec<(String, String)> =
            (0..n).map(|i| (format!("s{i:03}"), classes[rng.random_range(0..k)].clone())).collect();
        let pred: BTreeMap<String, String> =
            (0..n).map(|i| (format!("s{i:03}"), classes[rng.random_range(0..k)].clone())).collect();
        let mut evaluated: Vec<String> = classes.iter().filter(|_| rng.random_bool(0.8)).cloned().collect();
        if evaluated.is_empty() {
            evaluated.push(classes[0].clone());
        }
        let truth_map: Labels = truth.iter().cloned().collect();
        let report = compute_report(&truth_map, &pred, &evaluated).map_err(|e| e.to_string())?;
        let oracle = naive_report(&truth, &pred, &report.classes, &evaluated);
        let ours: Vec<(f64, f64, f64, u64)> =
            report.per_class.iter().map(|m| (m.precision, m.recall, m.f1, m.support)).collect();
        ensure(
            report.confusion == oracle.confusion
                && ours == oracle.per_class
                && report.micro_accuracy == oracle.accuracy
                && report.macro_f1 == oracle.macro_f1
                && report.n_test == n as u64,
            || format!("draw {draw} disagrees with the oracle"),
        )?;
    }
    Ok("1000 random draws agree exactly".into())
}

fn end_to_end_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec {
        n_fields: 4,
        n_classes: 3,
        images_per_cell: 12,
        ..experiment_spec(0.5)
    };
    let data = tmp.path().join("data");
    generate_synthetic_dataset(&spec)
        .and_then(|ds| ds.write(&data))
        .map_err(|e| e.to_string())?;
    let config = |out: &str| PipelineConfig {
        manifest: data.join("manifest.jsonl"),
        image_root: None,
        taxonomy: None,
        cleanse: Default::default(),
        split: SplitConfig {
            test_fields: ["F04".to_string()].into(),
            ..SplitConfig::default()
        },
        scenario: None,
        roi: RoiChoice::GroundTruth {
            annotations: data.join("annotations.jsonl"),
        },
        train: TrainConfig {
            epochs: 4,
            ..experiment_config()
        },
        output_dir: tmp.path().join(out),
    };
    let a = run_pipeline(&config("run-a")).map_err(|e| e.to_string())?;
    let b = run_pipeline(&config("run-b")).map_err(|e| e.to_string())?;
    let read = |dir: &std::path::Path, f: &str| std::fs::read(dir.join(f)).map_err(|e| e.to_string());
    for f in ["eval_report.json", "model/weights.bin", "split.jsonl", "dataset.jsonl"] {
        ensure(read(&a.run_dir, f)? == read(&b.run_dir, f)?, || format!("{f} differs between runs"))?;
    }
    ensure(a.provenance == b.provenance, || "provenance differs".into())?;
    Ok(format!(
        "two runs, byte-identical reports ({} test crops, accuracy {:.3})",
        a.report.n_test, a.report.micro_accuracy
    ))
}
