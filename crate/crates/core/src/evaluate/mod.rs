//! Metrics and reports, plus a synthetic confounded dataset and the
//! two-arm experiments run on it.

mod experiment;
mod metrics;
mod synth;

pub use experiment::{
    default_test_fields, run_on_dataset, run_scenario_experiment, ComparisonReport, ExperimentArm,
    ExperimentScenario,
};
pub use metrics::{
    compute_report, confusion_image, f1_score, normalize_confusion, read_labels, report_from_confusion, write_labels,
    ClassMetrics, EvalReport, LabelRow,
};
pub use synth::{generate_synthetic_dataset, SyntheticDataset, SyntheticSpec, SYNTHETIC_LABELS};
