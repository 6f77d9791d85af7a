use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::classify::{gradcam, predict, Classifier, ConvNetClassifier};
use crate::error::{Error, Result};
use crate::imaging::decode_image;
use crate::roi::{
    detect_rois, extract_roi_crops, ForegroundPredicate, ForegroundThresholdSegmenter, Point, SegmenterBackend,
};

pub const NO_ROI_FOUND: &str = "no ROI found";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_name: String,
    pub probability: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiIdentification {
    pub polygon: Vec<Point>,
    /// `(x0, y0, x1, y1)`, exclusive upper bounds, in source pixels.
    pub bbox: (u32, u32, u32, u32),
    pub top_k: Vec<ClassScore>,
    /// Source-image location of the Grad-CAM maximum for the top class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_peak: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub rois: Vec<RoiIdentification>,
    /// Set to [`NO_ROI_FOUND`] when the detector found nothing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub latency_ms: f64,
}

/// Two-stage inference over immutable model state: detect ROIs, crop,
/// classify each crop.
pub struct IdentificationService {
    model: Box<dyn Classifier>,
    segmenter: Box<dyn SegmenterBackend>,
    attention: bool,
    requests: AtomicU64,
    total_micros: AtomicU64,
}

impl IdentificationService {
    pub fn new(model: Box<dyn Classifier>, segmenter: Box<dyn SegmenterBackend>) -> Self {
        Self {
            model,
            segmenter,
            attention: false,
            requests: AtomicU64::new(0),
            total_micros: AtomicU64::new(0),
        }
    }

    /// Loads a saved model directory with the default leaf segmenter.
    pub fn load(model_dir: &Path) -> Result<Self> {
        let (model, _) = ConvNetClassifier::load(model_dir)?;
        Ok(Self::new(Box::new(model), Box::new(Self::default_segmenter())))
    }

    /// Vegetation by excess green, up to eight leaves per frame.
    pub fn default_segmenter() -> ForegroundThresholdSegmenter {
        ForegroundThresholdSegmenter {
            predicate: ForegroundPredicate::ExcessGreen,
            threshold: 60.0,
            min_area_px: 16,
            max_regions: 8,
        }
    }

    pub fn with_attention(mut self, on: bool) -> Self {
        self.attention = on;
        self
    }

    pub fn classes(&self) -> &[String] {
        self.model.classes()
    }

    pub fn identify_bytes(&self, bytes: &[u8], k: usize) -> Result<IdentificationResult> {
        self.identify(&decode_image(bytes)?, k)
    }

    pub fn identify(&self, image: &RgbImage, k: usize) -> Result<IdentificationResult> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let start = Instant::now();
        let detected = detect_rois("query", image, self.segmenter.as_ref());
        let crops = extract_roi_crops(image, &detected.proposals, self.model.input_side());
        let mut rois = Vec::with_capacity(crops.len());
        for (crop, img) in crops {
            let ranked = predict(self.model.as_ref(), &img)?;
            let attention_peak = if self.attention {
                let map = gradcam(self.model.as_ref(), &img, &ranked[0].0)?;
                let (i, _) = map
                    .data
                    .iter()
                    .enumerate()
                    .fold((0, f32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
                let (u, v) = ((i % map.width) as f64 + 0.5, (i / map.width) as f64 + 0.5);
                Some(crop.to_source(u, v))
            } else {
                None
            };
            let polygon = detected
                .proposals
                .iter()
                .find(|p| p.annotation_id == crop.annotation_id)
                .map(|p| p.vertices.clone())
                .unwrap_or_default();
            rois.push(RoiIdentification {
                polygon,
                bbox: crop.bbox,
                top_k: ranked
                    .into_iter()
                    .take(k)
                    .map(|(class_name, probability)| ClassScore { class_name, probability })
                    .collect(),
                attention_peak,
            });
        }
        let elapsed = start.elapsed();
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.total_micros.fetch_add(elapsed.as_micros() as u64, Ordering::Relaxed);
        Ok(IdentificationResult {
            message: rois.is_empty().then(|| NO_ROI_FOUND.to_string()),
            rois,
            latency_ms: elapsed.as_secs_f64() * 1e3,
        })
    }

    /// `(requests served, mean latency in ms)`.
    pub fn latency_stats(&self) -> (u64, f64) {
        let n = self.requests.load(Ordering::Relaxed);
        let total = self.total_micros.load(Ordering::Relaxed) as f64 / 1e3;
        (n, if n == 0 { 0.0 } else { total / n as f64 })
    }
}
