use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Crop, ImageRecord, Portion, Timestamp};
use crate::error::{Error, Result};
use crate::imaging::save_png;
use crate::jsonl;
use crate::roi::{geometry, PolygonAnnotation, ReviewStatus, Source, ROI_LABEL};

/// Eggplant leaf labels used for synthetic classes, healthy first.
pub const SYNTHETIC_LABELS: [&str; 11] = [
    "healthy",
    "broad mite",
    "Kanzawa spider mite",
    "twospotted spider mite",
    "cotton aphid",
    "green peach aphid",
    "melon thrips",
    "hadda beetle",
    "serpentine leafminer",
    "tobacco cutworm",
    "tobacco whitefly",
];

// Cue colours per class; index 0 (healthy) draws no cue.
const CUE_COLORS: [[u8; 3]; 11] = [
    [0, 0, 0],
    [220, 40, 40],
    [40, 60, 220],
    [235, 225, 50],
    [160, 50, 210],
    [245, 140, 20],
    [30, 210, 220],
    [250, 250, 250],
    [120, 60, 20],
    [250, 110, 180],
    [20, 20, 20],
];

const SOIL: [f64; 3] = [120.0, 100.0, 85.0];
const LEAF: [f64; 3] = [60.0, 150.0, 50.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_fields: usize,
    pub n_classes: usize,
    pub images_per_cell: usize,
    /// Scale of the per-(field, class) background colour shift; 0 makes
    /// every background share one distribution.
    pub confound_strength: f64,
    /// Cue disc diameter in pixels; 0 draws no cue.
    pub cue_size_px: u32,
    /// Per-pixel uniform noise amplitude on the background, in grey levels.
    pub background_noise: f64,
    /// Cue-coloured discs scattered on the background, per image.
    pub distractors: usize,
    pub image_side: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_fields: 5,
            n_classes: 4,
            images_per_cell: 50,
            confound_strength: 1.0,
            cue_size_px: 4,
            background_noise: 10.0,
            distractors: 0,
            image_side: 32,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_fields == 0 || self.n_classes == 0 || self.images_per_cell == 0 {
            return Err(Error::invalid("synthetic spec counts must be positive"));
        }
        if self.n_classes > SYNTHETIC_LABELS.len() {
            return Err(Error::invalid(format!("at most {} synthetic classes", SYNTHETIC_LABELS.len())));
        }
        if self.image_side < 16 {
            return Err(Error::invalid("synthetic images need a side of at least 16 px"));
        }
        if !(self.confound_strength >= 0.0 && self.background_noise >= 0.0) {
            return Err(Error::invalid("confound strength and noise must be non-negative"));
        }
        Ok(())
    }

    pub fn field_ids(&self) -> Vec<String> {
        (0..self.n_fields).map(field_id).collect()
    }
}

fn field_id(i: usize) -> String {
    format!("F{:02}", i + 1)
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<ImageRecord>,
    pub images: BTreeMap<String, RgbImage>,
    /// One accepted ground-truth polygon per record, around the leaf.
    pub polygons: Vec<PolygonAnnotation>,
    /// Cue disc centre and radius per record (absent for healthy or size 0).
    pub cues: BTreeMap<String, ([f64; 2], f64)>,
}

impl SyntheticDataset {
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.records.iter().map(ImageRecord::identity_class).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn polygons_by_record(&self) -> BTreeMap<&str, Vec<PolygonAnnotation>> {
        let mut out: BTreeMap<&str, Vec<PolygonAnnotation>> = BTreeMap::new();
        for p in &self.polygons {
            out.entry(p.record_id.as_str()).or_default().push(p.clone());
        }
        out
    }

    /// Writes `manifest.jsonl`, `annotations.jsonl` and `images/*.png`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::catalog::write_manifest(&dir.join("manifest.jsonl"), &self.records)?;
        jsonl::write_lines(&dir.join("annotations.jsonl"), &self.polygons)?;
        self.records
            .par_iter()
            .try_for_each(|r| save_png(&self.images[&r.record_id], &dir.join(&r.uri)))
    }
}

/// Background colour of one (field, class) session.
fn session_background(spec: &SyntheticSpec, field: usize, class: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_f1e1d);
    rng.set_stream((field * SYNTHETIC_LABELS.len() + class) as u64 + 1);
    let mut c = SOIL;
    for v in &mut c {
        *v += spec.confound_strength * rng.random_range(-70.0..70.0);
    }
    // Keep backgrounds non-green so leaves stay separable by excess green.
    let excess = 2.0 * c[1] - c[0] - c[2];
    if excess > 0.0 {
        c[1] -= excess / 2.0;
    }
    c.map(|v| v.clamp(0.0, 255.0))
}

fn disc(img: &mut RgbImage, center: [f64; 2], radius: f64, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let x0 = (center[0] - radius).floor().max(0.0) as u32;
    let y0 = (center[1] - radius).floor().max(0.0) as u32;
    let x1 = ((center[0] + radius).ceil() as u32).min(w);
    let y1 = ((center[1] + radius).ceil() as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - center[0], y as f64 + 0.5 - center[1]);
            if dx * dx + dy * dy <= radius * radius {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

fn ellipse(center: [f64; 2], rx: f64, ry: f64, angle: f64, n: usize) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            let (x, y) = (rx * t.cos(), ry * t.sin());
            [center[0] + x * c - y * s, center[1] + x * s + y * c]
        })
        .collect()
}

struct Rendered {
    image: RgbImage,
    leaf: Vec<[f64; 2]>,
    cue: Option<([f64; 2], f64)>,
}

fn render(spec: &SyntheticSpec, field: usize, class: usize, index: u64) -> Rendered {
    let side = spec.image_side;
    let s = side as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let bg = session_background(spec, field, class);
    let mut img = RgbImage::from_fn(side, side, |_, _| {
        Rgb(bg.map(|v| {
            let n = if spec.background_noise > 0.0 {
                rng.random_range(-spec.background_noise..=spec.background_noise)
            } else {
                0.0
            };
            (v + n).round().clamp(0.0, 255.0) as u8
        }))
    });
    for _ in 0..spec.distractors {
        let k = rng.random_range(1..spec.n_classes.max(2)).min(CUE_COLORS.len() - 1);
        let c = [rng.random_range(0.0..s), rng.random_range(0.0..s)];
        disc(&mut img, c, spec.cue_size_px.max(2) as f64 / 2.0, CUE_COLORS[k]);
    }

    let center = [s * rng.random_range(0.4..0.6), s * rng.random_range(0.4..0.6)];
    let rx = s * rng.random_range(0.26..0.34);
    let ry = s * rng.random_range(0.18..0.26);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let leaf = ellipse(center, rx, ry, angle, 24);
    let shade: f64 = rng.random_range(-15.0..15.0);
    let mask = geometry::rasterize(&leaf, side, side);
    for y in 0..side {
        for x in 0..side {
            if mask[(y * side + x) as usize] {
                let n: f64 = rng.random_range(-6.0..6.0);
                img.put_pixel(x, y, Rgb(LEAF.map(|v| (v + shade + n).round().clamp(0.0, 255.0) as u8)));
            }
        }
    }

    let cue = (class > 0 && spec.cue_size_px > 0).then(|| {
        let r = spec.cue_size_px as f64 / 2.0;
        // Uniform in the inner half of the leaf ellipse.
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let u: f64 = rng.random_range(0.0f64..1.0).sqrt() * 0.5;
        let (sa, ca) = angle.sin_cos();
        let (x, y) = (rx * u * t.cos(), ry * u * t.sin());
        let c = [center[0] + x * ca - y * sa, center[1] + x * sa + y * ca];
        disc(&mut img, c, r, CUE_COLORS[class]);
        (c, r)
    });
    Rendered { image: img, leaf, cue }
}

/// Eggplant-leaf images whose class is carried by a small coloured cue on
/// the leaf and whose background colour depends on (field, class).
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let base = NaiveDate::from_ymd_opt(2021, 5, 1).expect("valid date").and_hms_opt(9, 0, 0).expect("valid time");
    let cells: Vec<(usize, usize, usize)> = (0..spec.n_fields)
        .flat_map(|f| (0..spec.n_classes).flat_map(move |k| (0..spec.images_per_cell).map(move |i| (f, k, i))))
        .collect();
    let rendered: Vec<((usize, usize, usize), Rendered)> = cells
        .par_iter()
        .enumerate()
        .map(|(n, &cell)| (cell, render(spec, cell.0, cell.1, n as u64)))
        .collect();

    let mut ds = SyntheticDataset {
        records: Vec::with_capacity(rendered.len()),
        images: BTreeMap::new(),
        polygons: Vec::with_capacity(rendered.len()),
        cues: BTreeMap::new(),
    };
    for ((f, k, i), r) in rendered {
        let id = format!("{}-c{:02}-{:04}", field_id(f), k, i);
        // One capture session per (field, class) on its own day, 5 s apart.
        let captured = base + Duration::days((f * spec.n_classes + k) as i64) + Duration::seconds(5 * i as i64);
        ds.records.push(ImageRecord {
            record_id: id.clone(),
            uri: format!("images/{id}.png"),
            crop: Crop::Eggplant,
            portion: Portion::LeafFront,
            pest_label: SYNTHETIC_LABELS[k].to_string(),
            field_id: field_id(f),
            captured_at: Timestamp(captured),
            device_id: Some(format!("cam-{}", field_id(f))),
            width_px: spec.image_side,
            height_px: spec.image_side,
        });
        ds.polygons.push(PolygonAnnotation {
            annotation_id: format!("{id}-gt"),
            record_id: id.clone(),
            vertices: r.leaf,
            label: ROI_LABEL.to_string(),
            source: Source::Human,
            review_status: ReviewStatus::Accepted,
            created_at: Timestamp(base),
            round: None,
        });
        if let Some(c) = r.cue {
            ds.cues.insert(id.clone(), c);
        }
        ds.images.insert(id, r.image);
    }
    Ok(ds)
}
