//! Region-of-interest stage: polygon annotations, square black-background
//! crops, segmentation backends and the self-training annotation loop.

mod crop;
pub mod geometry;
mod segment;
mod store;

use serde::{Deserialize, Serialize};

use crate::catalog::Timestamp;

pub use crop::{extract_roi_crops, extract_roi_crops_with_warnings, RoiCrop};
pub use geometry::Point;
pub use segment::{
    detect_rois, DetectOutcome, ForegroundPredicate, ForegroundThresholdSegmenter, GroundTruthBackend,
    SegmenterBackend, TrainingExample,
};
pub use store::{AnnotationStore, Decision, ProposalBatch, ReviewOutcome, ReviewResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Model,
    /// A model proposal accepted without edits.
    ModelAccepted,
    /// A model proposal accepted after a reviewer moved vertices.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

pub const ROI_LABEL: &str = "roi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub annotation_id: String,
    pub record_id: String,
    pub vertices: Vec<Point>,
    /// A class name, or `roi` for class-agnostic regions.
    pub label: String,
    pub source: Source,
    pub review_status: ReviewStatus,
    pub created_at: Timestamp,
    /// Self-training round that proposed this polygon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl PolygonAnnotation {
    /// An accepted, human-drawn region.
    pub fn human(annotation_id: impl Into<String>, record_id: impl Into<String>, vertices: Vec<Point>) -> Self {
        Self {
            annotation_id: annotation_id.into(),
            record_id: record_id.into(),
            vertices,
            label: ROI_LABEL.into(),
            source: Source::Human,
            review_status: ReviewStatus::Accepted,
            created_at: Timestamp::now(),
            round: None,
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        geometry::validate(&self.vertices, width, height)
    }

    pub fn area(&self) -> f64 {
        geometry::area(&self.vertices)
    }

    /// Usable as training data for the segmenter and the classifier.
    pub fn is_trainable(&self) -> bool {
        self.review_status == ReviewStatus::Accepted
    }
}
