use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::segment::{detect_rois, SegmenterBackend, TrainingExample};
use super::{Point, PolygonAnnotation, ReviewStatus, Source};
use crate::catalog::ImageRecord;
use crate::error::{Error, Result};
use crate::imaging::ImageSource;
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// One reviewer verdict; `vertices` replaces the proposal's when accepting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResult {
    pub annotation_id: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub annotation_id: String,
    pub review_status: ReviewStatus,
    pub source: Source,
    pub vertices: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatch {
    pub round: u32,
    /// Records the backend was run on.
    pub records: Vec<String>,
    pub annotation_ids: Vec<String>,
    /// `(record_id, reason)` for records whose detection failed.
    pub flagged: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Add { annotation: PolygonAnnotation },
    Review { outcome: ReviewOutcome },
}

/// Annotation state rebuilt from an append-only JSONL event log.
///
/// Reviews never overwrite history: the log keeps the original proposal and
/// every verdict, and the in-memory view is the fold of all events.
#[derive(Debug, Default)]
pub struct AnnotationStore {
    path: Option<PathBuf>,
    annotations: BTreeMap<String, PolygonAnnotation>,
    reviews: BTreeMap<String, ReviewOutcome>,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first write) the log at `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        if path.exists() {
            for event in jsonl::read_lines::<Event>(path)? {
                store.fold(event);
            }
        }
        Ok(store)
    }

    fn fold(&mut self, event: Event) {
        match event {
            Event::Add { annotation } => {
                self.annotations.insert(annotation.annotation_id.clone(), annotation);
            }
            Event::Review { outcome } => {
                if let Some(a) = self.annotations.get_mut(&outcome.annotation_id) {
                    a.review_status = outcome.review_status;
                    a.source = outcome.source;
                    a.vertices = outcome.vertices.clone();
                }
                self.reviews.insert(outcome.annotation_id.clone(), outcome);
            }
        }
    }

    fn append(&mut self, events: Vec<Event>) -> Result<()> {
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut buf = Vec::new();
            for e in &events {
                serde_json::to_writer(&mut buf, e)?;
                buf.push(b'\n');
            }
            file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        for e in events {
            self.fold(e);
        }
        Ok(())
    }

    /// Adds annotations; an existing ID is an error.
    pub fn add(&mut self, annotations: Vec<PolygonAnnotation>) -> Result<()> {
        let mut ids = BTreeSet::new();
        for a in &annotations {
            if self.annotations.contains_key(&a.annotation_id) || !ids.insert(a.annotation_id.as_str()) {
                return Err(Error::invalid(format!("annotation {:?} already exists", a.annotation_id)));
            }
        }
        self.append(annotations.into_iter().map(|annotation| Event::Add { annotation }).collect())
    }

    pub fn get(&self, annotation_id: &str) -> Option<&PolygonAnnotation> {
        self.annotations.get(annotation_id)
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn all(&self) -> impl Iterator<Item = &PolygonAnnotation> {
        self.annotations.values()
    }

    pub fn for_record(&self, record_id: &str) -> Vec<&PolygonAnnotation> {
        self.annotations.values().filter(|a| a.record_id == record_id).collect()
    }

    /// Pending proposals ordered by annotation ID.
    pub fn pending(&self) -> Vec<&PolygonAnnotation> {
        self.annotations
            .values()
            .filter(|a| a.review_status == ReviewStatus::Pending)
            .collect()
    }

    /// Accepted annotations: human, model-accepted and corrected.
    pub fn training_set(&self) -> Vec<&PolygonAnnotation> {
        self.annotations.values().filter(|a| a.is_trainable()).collect()
    }

    fn next_round(&self) -> u32 {
        self.annotations.values().filter_map(|a| a.round).max().map_or(1, |r| r + 1)
    }

    /// Retrains the backend on the accepted set (when it can learn), then
    /// proposes polygons for up to `batch_size` records that have no
    /// annotation of any status, and stores them as pending.
    pub fn run_self_training_round(
        &mut self,
        records: &[ImageRecord],
        images: &dyn ImageSource,
        backend: &mut dyn SegmenterBackend,
        batch_size: usize,
    ) -> Result<ProposalBatch> {
        let by_id: BTreeMap<&str, &ImageRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
        let mut examples = Vec::new();
        for a in self.training_set() {
            let Some(r) = by_id.get(a.record_id.as_str()) else { continue };
            match images.load(r) {
                Ok(image) => examples.push(TrainingExample {
                    image,
                    polygon: a.clone(),
                }),
                Err(e) => warn!("skipping training example {}: {e}", a.annotation_id),
            }
        }
        match backend.train(&examples) {
            Ok(()) => info!("{} retrained on {} polygons", backend.name(), examples.len()),
            Err(Error::Unsupported(_)) => {}
            Err(e) => return Err(e),
        }

        let annotated: BTreeSet<&str> = self.annotations.values().map(|a| a.record_id.as_str()).collect();
        let pool: Vec<&ImageRecord> = by_id
            .values()
            .copied()
            .filter(|r| !annotated.contains(r.record_id.as_str()))
            .take(batch_size)
            .collect();

        let round = self.next_round();
        let mut batch = ProposalBatch {
            round,
            records: pool.iter().map(|r| r.record_id.clone()).collect(),
            annotation_ids: Vec::new(),
            flagged: Vec::new(),
        };
        let mut new = Vec::new();
        for r in pool {
            let image = match images.load(r) {
                Ok(i) => i,
                Err(e) => {
                    batch.flagged.push((r.record_id.clone(), e.to_string()));
                    continue;
                }
            };
            let outcome = detect_rois(&r.record_id, &image, &*backend);
            if let Some(err) = outcome.error {
                batch.flagged.push((r.record_id.clone(), err));
            }
            for (k, mut p) in outcome.proposals.into_iter().enumerate() {
                p.annotation_id = format!("r{round}-{}-{k}", r.record_id);
                p.round = Some(round);
                batch.annotation_ids.push(p.annotation_id.clone());
                new.push(p);
            }
        }
        self.append(new.into_iter().map(|annotation| Event::Add { annotation }).collect())?;
        Ok(batch)
    }

    /// Applies reviewer verdicts. A verdict for an already reviewed proposal
    /// returns the recorded outcome and writes nothing, so resubmitting a
    /// batch is harmless. Any unknown ID rejects the whole batch.
    pub fn import_reviewed_annotations(&mut self, results: &[ReviewResult]) -> Result<Vec<ReviewOutcome>> {
        for r in results {
            let Some(a) = self.annotations.get(&r.annotation_id) else {
                return Err(Error::UnknownAnnotation(r.annotation_id.clone()));
            };
            if a.review_status != ReviewStatus::Pending && !self.reviews.contains_key(&r.annotation_id) {
                return Err(Error::invalid(format!("annotation {:?} is not a pending proposal", r.annotation_id)));
            }
            if let (Decision::Accept, Some(v)) = (r.decision, &r.vertices) {
                if v.len() < 3 || super::geometry::area(v) <= 0.0 || super::geometry::is_self_intersecting(v) {
                    return Err(Error::invalid(format!("invalid polygon for {:?}", r.annotation_id)));
                }
            }
        }

        let mut outcomes = Vec::with_capacity(results.len());
        for r in results {
            if let Some(done) = self.reviews.get(&r.annotation_id) {
                outcomes.push(done.clone());
                continue;
            }
            let current = &self.annotations[&r.annotation_id];
            let outcome = match r.decision {
                Decision::Reject => ReviewOutcome {
                    annotation_id: r.annotation_id.clone(),
                    review_status: ReviewStatus::Rejected,
                    source: current.source,
                    vertices: current.vertices.clone(),
                },
                Decision::Accept => {
                    let vertices = r.vertices.clone().unwrap_or_else(|| current.vertices.clone());
                    let source = if vertices == current.vertices { Source::ModelAccepted } else { Source::Corrected };
                    ReviewOutcome {
                        annotation_id: r.annotation_id.clone(),
                        review_status: ReviewStatus::Accepted,
                        source,
                        vertices,
                    }
                }
            };
            self.append(vec![Event::Review { outcome: outcome.clone() }])?;
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}
