//! Image manifest, pest taxonomy and the known `{pest, portion, crop}`
//! combination table.
//!
//! Every downstream stage reads records through a [`Manifest`]; it is
//! immutable once ingested.

mod combos;
mod manifest;
mod record;
mod taxonomy;

pub use combos::{is_known_combination, known_combinations, Combination};
pub use manifest::{
    ingest_manifest, ingest_manifest_with, query_records, validate_records, write_manifest,
    IngestOutcome, IssueKind, Manifest, RecordFilter, RowFlag, ValidationIssue,
};
pub use record::{Crop, ImageRecord, Portion, Timestamp};
pub(crate) use record::identity_class_name;
pub use taxonomy::{IntegrationGroup, SpeciesEntry, Taxon, Taxonomy, HEALTHY};
