//! Core algorithms for a two-stage plant pest identifier.
//!
//! The crate follows the data flow of the pipeline:
//!
//! * [`catalog`]: image manifest, pest taxonomy and the known
//!   `{pest, portion, crop}` combination table.
//! * [`cleanse`]: burst-frame filtering and embedding near-duplicate removal.
//! * [`split`]: same-farm, different-farm and date-fallback train/test splits,
//!   plus the leakage audit that training requires.
//! * [`classes`]: class schemes (identity, pest integration, cross-crop
//!   composition, the 25-class main scheme).
//! * [`roi`]: polygon annotations, ROI crop extraction, segmenter backends
//!   and the self-training annotation store.
//! * [`augment`]: flips, rotations, center zoom, bordered shrink, Mixup.
//! * [`classify`]: the reference CNN, training harness, prediction, Grad-CAM.
//! * [`evaluate`]: metrics, synthetic datasets and the scenario experiments.
//! * [`pipeline`]: end-to-end orchestration and the identification service
//!   logic used by the HTTP layer.

pub mod augment;
pub mod catalog;
pub mod classes;
pub mod classify;
pub mod cleanse;
pub mod error;
pub mod evaluate;
pub mod imaging;
pub mod jsonl;
pub mod pipeline;
pub mod roi;
pub mod split;

pub use catalog::{Crop, ImageRecord, Manifest, Portion, Taxonomy};
pub use classes::{ClassScheme, ScenarioConfig};
pub use error::{Error, Result};
pub use evaluate::EvalReport;
pub use roi::PolygonAnnotation;
pub use split::SplitAssignment;
