use std::collections::{BTreeMap, VecDeque};

use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};

use super::geometry::{self, Point};
use super::{PolygonAnnotation, ReviewStatus, Source, ROI_LABEL};
use crate::catalog::Timestamp;
use crate::error::{Error, Result};

/// An accepted polygon together with its image.
pub struct TrainingExample {
    pub image: RgbImage,
    pub polygon: PolygonAnnotation,
}

/// Proposes ROI polygons. Training is an optional capability.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;

    fn propose(&self, record_id: &str, image: &RgbImage) -> Result<Vec<PolygonAnnotation>>;

    fn train(&mut self, _examples: &[TrainingExample]) -> Result<()> {
        Err(Error::Unsupported("segmenter training"))
    }
}

/// Returns stored polygons unchanged; the reference for crop extraction
/// when human annotations exist.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthBackend {
    pub polygons: BTreeMap<String, Vec<PolygonAnnotation>>,
}

impl GroundTruthBackend {
    pub fn new(annotations: impl IntoIterator<Item = PolygonAnnotation>) -> Self {
        let mut polygons: BTreeMap<String, Vec<PolygonAnnotation>> = BTreeMap::new();
        for a in annotations {
            polygons.entry(a.record_id.clone()).or_default().push(a);
        }
        Self { polygons }
    }
}

impl SegmenterBackend for GroundTruthBackend {
    fn name(&self) -> &str {
        "ground_truth"
    }

    fn propose(&self, record_id: &str, _image: &RgbImage) -> Result<Vec<PolygonAnnotation>> {
        Ok(self.polygons.get(record_id).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForegroundPredicate {
    /// Mean channel value above the threshold.
    Brightness,
    /// `2g - r - b` above the threshold; picks vegetation off soil or mulch.
    ExcessGreen,
}

/// Thresholds pixels, keeps the largest 4-connected components and returns
/// their convex hulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundThresholdSegmenter {
    pub predicate: ForegroundPredicate,
    /// On the 0..=255 scale of the predicate.
    pub threshold: f64,
    pub min_area_px: usize,
    pub max_regions: usize,
}

impl Default for ForegroundThresholdSegmenter {
    fn default() -> Self {
        Self {
            predicate: ForegroundPredicate::Brightness,
            threshold: 24.0,
            min_area_px: 16,
            max_regions: 1,
        }
    }
}

impl ForegroundThresholdSegmenter {
    fn score(&self, p: [u8; 3]) -> f64 {
        let [r, g, b] = p.map(f64::from);
        match self.predicate {
            ForegroundPredicate::Brightness => (r + g + b) / 3.0,
            ForegroundPredicate::ExcessGreen => 2.0 * g - r - b,
        }
    }

    /// Components as pixel lists, largest first.
    fn components(&self, image: &RgbImage) -> Vec<Vec<(u32, u32)>> {
        let (w, h) = image.dimensions();
        let fg: Vec<bool> = image.pixels().map(|p| self.score(p.0) > self.threshold).collect();
        let mut seen = vec![false; fg.len()];
        let mut out = Vec::new();
        for start in 0..fg.len() {
            if !fg[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut pixels = Vec::new();
            while let Some(i) = queue.pop_front() {
                let (x, y) = ((i as u32) % w, (i as u32) / w);
                pixels.push((x, y));
                let neighbors = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                    (y > 0).then(|| i - w as usize),
                    (y + 1 < h).then(|| i + w as usize),
                ];
                for j in neighbors.into_iter().flatten() {
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if pixels.len() >= self.min_area_px {
                out.push(pixels);
            }
        }
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    pub fn polygons(&self, image: &RgbImage) -> Vec<Vec<Point>> {
        self.components(image)
            .into_iter()
            .take(self.max_regions)
            .map(|pixels| {
                let corners: Vec<Point> = pixels
                    .iter()
                    .flat_map(|&(x, y)| {
                        let (x, y) = (f64::from(x), f64::from(y));
                        [[x, y], [x + 1.0, y], [x, y + 1.0], [x + 1.0, y + 1.0]]
                    })
                    .collect();
                geometry::convex_hull(&corners)
            })
            .filter(|hull| hull.len() >= 3)
            .collect()
    }
}

impl SegmenterBackend for ForegroundThresholdSegmenter {
    fn name(&self) -> &str {
        "foreground_threshold"
    }

    fn propose(&self, record_id: &str, image: &RgbImage) -> Result<Vec<PolygonAnnotation>> {
        let now = Timestamp::now();
        Ok(self
            .polygons(image)
            .into_iter()
            .enumerate()
            .map(|(i, vertices)| PolygonAnnotation {
                annotation_id: format!("{record_id}-m{i}"),
                record_id: record_id.to_string(),
                vertices,
                label: ROI_LABEL.into(),
                source: Source::Model,
                review_status: ReviewStatus::Pending,
                created_at: now,
                round: None,
            })
            .collect())
    }

    /// Picks the threshold with the best mean IoU on the accepted polygons.
    fn train(&mut self, examples: &[TrainingExample]) -> Result<()> {
        if examples.is_empty() {
            return Ok(());
        }
        let candidates: Vec<f64> = match self.predicate {
            ForegroundPredicate::Brightness => (1..32).map(|k| f64::from(k) * 8.0).collect(),
            ForegroundPredicate::ExcessGreen => (-8..32).map(|k| f64::from(k) * 8.0).collect(),
        };
        let mut best = (f64::NEG_INFINITY, self.threshold);
        for t in candidates {
            let trial = Self { threshold: t, ..self.clone() };
            let mut total = 0.0;
            for ex in examples {
                let (w, h) = ex.image.dimensions();
                total += trial
                    .polygons(&ex.image)
                    .first()
                    .map_or(0.0, |p| geometry::mask_iou(p, &ex.polygon.vertices, w, h));
            }
            if total > best.0 {
                best = (total, t);
            }
        }
        self.threshold = best.1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub proposals: Vec<PolygonAnnotation>,
    /// Set when the backend failed or returned invalid polygons.
    pub error: Option<String>,
}

/// Runs a backend and normalises its output: every proposal is marked as a
/// pending model proposal, and invalid polygons are dropped and reported.
pub fn detect_rois(record_id: &str, image: &RgbImage, backend: &dyn SegmenterBackend) -> DetectOutcome {
    let (w, h) = image.dimensions();
    let raw = match backend.propose(record_id, image) {
        Ok(r) => r,
        Err(e) => {
            warn!("{} failed on {record_id}: {e}", backend.name());
            return DetectOutcome {
                proposals: Vec::new(),
                error: Some(e.to_string()),
            };
        }
    };
    let mut proposals = Vec::new();
    let mut problems = Vec::new();
    for mut p in raw {
        if let Err(reason) = p.validate(w, h) {
            problems.push(format!("{}: {reason}", p.annotation_id));
            continue;
        }
        p.record_id = record_id.to_string();
        p.source = Source::Model;
        p.review_status = ReviewStatus::Pending;
        proposals.push(p);
    }
    DetectOutcome {
        proposals,
        error: (!problems.is_empty()).then(|| problems.join("; ")),
    }
}
