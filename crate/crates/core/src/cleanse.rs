//! Removal of burst-mode frames and embedding-space near-duplicates.
//!
//! Both passes run before any split so that near-identical images can never
//! straddle the train/test boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use image::RgbImage;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ImageRecord;
use crate::error::Result;
use crate::imaging::{resize_bilinear, ImageSource};
use crate::jsonl;

pub const DEFAULT_BURST_INTERVAL_S: f64 = 1.0;
pub const DEFAULT_DUP_THRESHOLD: f64 = 0.05;

/// Deterministic image embedder.
pub trait EmbeddingBackend: Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, image: &RgbImage) -> Vec<f32>;
}

/// Downsampled pixels with the per-image mean removed, so cosine distance
/// behaves like one minus the pixel correlation.
#[derive(Debug, Clone, Copy)]
pub struct PixelEmbedder {
    pub side: u32,
}

impl Default for PixelEmbedder {
    fn default() -> Self {
        Self { side: 8 }
    }
}

impl EmbeddingBackend for PixelEmbedder {
    fn dimension(&self) -> usize {
        (self.side * self.side * 3) as usize
    }

    fn embed(&self, image: &RgbImage) -> Vec<f32> {
        let small = resize_bilinear(image, self.side, self.side);
        let mut v: Vec<f32> = small
            .pixels()
            .flat_map(|p| p.0.map(|c| f32::from(c) / 255.0))
            .collect();
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        v.iter_mut().for_each(|x| *x -= mean);
        v
    }
}

/// Wraps any embedding function, e.g. a learned network's penultimate layer.
pub struct FnEmbedder<F> {
    pub dimension: usize,
    pub embed: F,
}

impl<F> EmbeddingBackend for FnEmbedder<F>
where
    F: Fn(&RgbImage) -> Vec<f32> + Sync,
{
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image: &RgbImage) -> Vec<f32> {
        (self.embed)(image)
    }
}

/// `1 - cos(a, b)`. Two zero vectors are identical (0); a zero vector is
/// maximally distant (1) from anything else.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    match (na > 0.0, nb > 0.0) {
        (false, false) => 0.0,
        (true, true) => (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstDrop {
    pub record_id: String,
    /// The earlier kept record this one was too close to.
    pub kept_neighbor: String,
    pub interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateDrop {
    pub record_id: String,
    pub nearest_kept: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanseReport {
    pub kept: Vec<String>,
    pub dropped_burst: Vec<BurstDrop>,
    pub dropped_duplicate: Vec<DuplicateDrop>,
    /// Kept, but needs a human look (e.g. the image failed to load).
    pub flagged_for_review: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum ReportLine<'a> {
    Kept {
        record_id: &'a str,
        flagged: bool,
    },
    Burst {
        record_id: &'a str,
        neighbor: &'a str,
        interval_s: f64,
    },
    Duplicate {
        record_id: &'a str,
        neighbor: &'a str,
        distance: f64,
    },
}

impl CleanseReport {
    /// One line per input record, ordered by record ID.
    pub fn write(&self, path: &Path) -> Result<()> {
        let flagged: BTreeSet<&str> = self.flagged_for_review.iter().map(String::as_str).collect();
        let mut lines: BTreeMap<&str, ReportLine<'_>> = BTreeMap::new();
        for id in &self.kept {
            lines.insert(
                id,
                ReportLine::Kept {
                    record_id: id,
                    flagged: flagged.contains(id.as_str()),
                },
            );
        }
        for d in &self.dropped_burst {
            lines.insert(
                &d.record_id,
                ReportLine::Burst {
                    record_id: &d.record_id,
                    neighbor: &d.kept_neighbor,
                    interval_s: d.interval_s,
                },
            );
        }
        for d in &self.dropped_duplicate {
            lines.insert(
                &d.record_id,
                ReportLine::Duplicate {
                    record_id: &d.record_id,
                    neighbor: &d.nearest_kept,
                    distance: d.distance,
                },
            );
        }
        jsonl::write_lines(path, lines.values())
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped_burst.len() + self.dropped_duplicate.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct BurstKey {
    field_id: String,
    device_id: Option<String>,
    date: NaiveDate,
}

/// Drops frames taken less than `min_interval_s` after the last kept frame
/// of the same (field, device, calendar date) group.
pub fn filter_bursts(records: &[ImageRecord], min_interval_s: f64) -> CleanseReport {
    let mut report = CleanseReport::default();
    let mut groups: BTreeMap<BurstKey, Vec<&ImageRecord>> = BTreeMap::new();
    let mut degraded = 0usize;
    for r in records {
        if r.device_id.is_none() {
            degraded += 1;
        }
        groups
            .entry(BurstKey {
                field_id: r.field_id.clone(),
                device_id: r.device_id.clone(),
                date: r.captured_at.date(),
            })
            .or_default()
            .push(r);
    }
    if degraded > 0 {
        let msg = format!("{degraded} record(s) without device_id grouped by (field_id, date) only");
        warn!("{msg}");
        report.warnings.push(msg);
    }

    for group in groups.values_mut() {
        group.sort_by(|a, b| {
            a.captured_at
                .cmp(&b.captured_at)
                .then_with(|| a.record_id.cmp(&b.record_id))
        });
        let mut last_kept: Option<&ImageRecord> = None;
        for r in group.iter() {
            match last_kept {
                Some(prev) => {
                    let interval = r.captured_at.seconds() - prev.captured_at.seconds();
                    if interval < min_interval_s {
                        report.dropped_burst.push(BurstDrop {
                            record_id: r.record_id.clone(),
                            kept_neighbor: prev.record_id.clone(),
                            interval_s: interval,
                        });
                    } else {
                        report.kept.push(r.record_id.clone());
                        last_kept = Some(r);
                    }
                }
                None => {
                    report.kept.push(r.record_id.clone());
                    last_kept = Some(r);
                }
            }
        }
    }
    report.kept.sort();
    report.dropped_burst.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    report
}

/// Greedy keep-first scan in record-ID order: a record is dropped when its
/// embedding lies closer than `distance_threshold` (cosine) to any record
/// already kept. Unloadable images are kept and flagged.
pub fn remove_near_duplicates(
    records: &[ImageRecord],
    images: &dyn ImageSource,
    backend: &dyn EmbeddingBackend,
    distance_threshold: f64,
) -> CleanseReport {
    let mut ordered: Vec<&ImageRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let embeddings: Vec<Option<Vec<f32>>> = ordered
        .par_iter()
        .map(|r| images.load(r).ok().map(|img| backend.embed(&img)))
        .collect();

    let mut report = CleanseReport::default();
    let mut kept: Vec<(&str, &[f32])> = Vec::new();
    for (r, emb) in ordered.iter().zip(&embeddings) {
        let Some(emb) = emb else {
            report.kept.push(r.record_id.clone());
            report.flagged_for_review.push(r.record_id.clone());
            continue;
        };
        let nearest = kept
            .iter()
            .map(|(id, k)| (*id, cosine_distance(emb, k)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((id, d)) if d < distance_threshold => {
                report.dropped_duplicate.push(DuplicateDrop {
                    record_id: r.record_id.clone(),
                    nearest_kept: id.to_string(),
                    distance: d,
                });
            }
            _ => {
                report.kept.push(r.record_id.clone());
                kept.push((&r.record_id, emb));
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanseConfig {
    pub burst_interval_s: f64,
    pub dup_threshold: f64,
}

impl Default for CleanseConfig {
    fn default() -> Self {
        Self {
            burst_interval_s: DEFAULT_BURST_INTERVAL_S,
            dup_threshold: DEFAULT_DUP_THRESHOLD,
        }
    }
}

/// Burst filter followed by duplicate removal over the survivors.
pub fn cleanse(
    records: &[ImageRecord],
    images: &dyn ImageSource,
    backend: &dyn EmbeddingBackend,
    config: &CleanseConfig,
) -> CleanseReport {
    let bursts = filter_bursts(records, config.burst_interval_s);
    let survivors: BTreeSet<&str> = bursts.kept.iter().map(String::as_str).collect();
    let remaining: Vec<ImageRecord> = records
        .iter()
        .filter(|r| survivors.contains(r.record_id.as_str()))
        .cloned()
        .collect();
    let dups = remove_near_duplicates(&remaining, images, backend, config.dup_threshold);
    CleanseReport {
        kept: dups.kept,
        dropped_burst: bursts.dropped_burst,
        dropped_duplicate: dups.dropped_duplicate,
        flagged_for_review: dups.flagged_for_review,
        warnings: bursts.warnings,
    }
}
