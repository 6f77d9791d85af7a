use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::classes::Labels;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::split::SplitPolicy;

/// One line of a truth or prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub class: String,
}

pub fn write_labels(path: &Path, labels: &Labels) -> Result<()> {
    jsonl::write_lines(
        path,
        labels.iter().map(|(id, class)| LabelRow {
            id: id.clone(),
            class: class.clone(),
        }),
    )
}

/// Reads a label file; a repeated ID is an error.
pub fn read_labels(path: &Path) -> Result<Labels> {
    let mut out = Labels::new();
    for row in jsonl::read_lines::<LabelRow>(path)? {
        if out.insert(row.id.clone(), row.class).is_some() {
            return Err(Error::invalid(format!("{}: id {:?} appears twice", path.display(), row.id)));
        }
    }
    Ok(out)
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Row and column order of `confusion`: evaluated classes first, then
    /// any other class seen in truth or predictions.
    pub classes: Vec<String>,
    pub evaluated_classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// One entry per evaluated class.
    pub per_class: Vec<ClassMetrics>,
    pub micro_accuracy: f64,
    pub macro_f1: f64,
    pub n_test: u64,
    /// Zero divisions and zero-support classes.
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_policy: Option<SplitPolicy>,
}

impl EvalReport {
    pub fn class_metrics(&self, class: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

/// Builds a report from paired labels. Both maps must cover the same records.
pub fn compute_report(truth: &Labels, predictions: &Labels, evaluated_classes: &[String]) -> Result<EvalReport> {
    if truth.len() != predictions.len() || truth.keys().any(|k| !predictions.contains_key(k)) {
        let missing: Vec<&String> = truth
            .keys()
            .filter(|k| !predictions.contains_key(*k))
            .chain(predictions.keys().filter(|k| !truth.contains_key(*k)))
            .take(5)
            .collect();
        return Err(Error::invalid(format!("truth and predictions cover different records, e.g. {missing:?}")));
    }
    let mut classes: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in evaluated_classes {
        if seen.insert(c.as_str()) {
            classes.push(c.clone());
        }
    }
    let extra: BTreeSet<String> =
        truth.values().chain(predictions.values()).filter(|c| !seen.contains(c.as_str())).cloned().collect();
    let n_evaluated = classes.len();
    classes.extend(extra);
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (id, t) in truth {
        confusion[index[t.as_str()]][index[predictions[id].as_str()]] += 1;
    }
    let evaluated = classes[..n_evaluated].to_vec();
    Ok(report_from_confusion(classes, confusion, &evaluated))
}

/// Builds a report from a confusion matrix whose first rows are the
/// evaluated classes (any subset is accepted and looked up by name).
pub fn report_from_confusion(classes: Vec<String>, confusion: Vec<Vec<u64>>, evaluated_classes: &[String]) -> EvalReport {
    let k = classes.len();
    let mut flags = Vec::new();
    let n_test: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::new();
    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for name in evaluated_classes {
        let Some(i) = classes.iter().position(|c| c == name) else {
            flags.push(format!("{name}: not present in the class list"));
            continue;
        };
        let tp = confusion[i][i];
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| confusion[r][i]).sum();
        let (fp, fn_) = (predicted - tp, support - tp);
        let precision = if predicted == 0 {
            flags.push(format!("{name}: precision undefined (never predicted), set to 0"));
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            flags.push(format!("{name}: zero support, recall set to 0 and class left out of macro F1"));
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = f1_score(precision, recall);
        if support > 0 {
            f1_sum += f1;
            f1_count += 1;
        }
        per_class.push(ClassMetrics {
            class: name.clone(),
            precision,
            recall,
            f1,
            support,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        });
    }
    EvalReport {
        evaluated_classes: per_class.iter().map(|m| m.class.clone()).collect(),
        classes,
        confusion,
        per_class,
        micro_accuracy: if n_test == 0 { 0.0 } else { trace as f64 / n_test as f64 },
        macro_f1: if f1_count == 0 { 0.0 } else { f1_sum / f1_count as f64 },
        n_test,
        flags,
        split_policy: None,
    }
}

/// Row-normalised confusion (each row divided by its support) and the
/// indices of zero-support rows, which are left as zeros.
pub fn normalize_confusion(confusion: &[Vec<u64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut empty = Vec::new();
    let rows = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                empty.push(i);
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    (rows, empty)
}

/// Recall-normalised confusion as a grey-scale grid, `cell` pixels per entry.
pub fn confusion_image(report: &EvalReport, cell: u32) -> RgbImage {
    let (norm, _) = normalize_confusion(&report.confusion);
    let k = norm.len() as u32;
    RgbImage::from_fn(k * cell.max(1), k * cell.max(1), |x, y| {
        let v = norm[(y / cell.max(1)) as usize][(x / cell.max(1)) as usize];
        let g = 255 - (v * 255.0).round() as u8;
        Rgb([g, g, 255])
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn labels(pairs: &[(&str, &str)]) -> Labels {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_computed_three_class_report() {
        let truth = labels(&[("1", "a"), ("2", "a"), ("3", "b"), ("4", "b"), ("5", "c")]);
        let pred = labels(&[("1", "a"), ("2", "b"), ("3", "b"), ("4", "b"), ("5", "a")]);
        let r = compute_report(&truth, &pred, &names(&["a", "b", "c"])).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 0]]);
        assert_eq!(r.micro_accuracy, 0.6);
        let a = r.class_metrics("a").unwrap();
        assert_eq!((a.precision, a.recall), (0.5, 0.5));
        let b = r.class_metrics("b").unwrap();
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12 && b.recall == 1.0);
        let c = r.class_metrics("c").unwrap();
        assert_eq!(c.f1, 0.0);
        assert!((r.macro_f1 - (0.5 + 0.8 + 0.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.flags.len(), 1);
    }

    #[test]
    fn zero_support_class_is_flagged_and_excluded() {
        let truth = labels(&[("1", "a"), ("2", "a")]);
        let pred = labels(&[("1", "a"), ("2", "z")]);
        let r = compute_report(&truth, &pred, &names(&["a", "z"])).unwrap();
        assert_eq!(r.class_metrics("a").unwrap().f1, f1_score(1.0, 0.5));
        assert!((r.macro_f1 - f1_score(1.0, 0.5)).abs() < 1e-12);
        assert!(r.flags.iter().any(|f| f.contains("z: zero support")));
    }

    #[test]
    fn extra_predicted_classes_follow_evaluated_ones() {
        let truth = labels(&[("1", "a")]);
        let pred = labels(&[("1", "train-only")]);
        let r = compute_report(&truth, &pred, &names(&["a"])).unwrap();
        assert_eq!(r.classes, names(&["a", "train-only"]));
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.micro_accuracy, 0.0);
    }

    #[test]
    fn mismatched_records_are_fatal() {
        let truth = labels(&[("1", "a"), ("2", "a")]);
        let pred = labels(&[("1", "a"), ("3", "a")]);
        assert!(compute_report(&truth, &pred, &names(&["a"])).is_err());
    }

    #[test]
    fn normalization() {
        let (n, empty) = normalize_confusion(&[vec![2, 2, 0], vec![0, 0, 0], vec![1, 0, 3]]);
        assert_eq!(n, vec![vec![0.5, 0.5, 0.0], vec![0.0; 3], vec![0.25, 0.0, 0.75]]);
        assert_eq!(empty, [1]);
        let (id, _) = normalize_confusion(&[vec![4, 0], vec![0, 9]]);
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    proptest! {
        #[test]
        fn macro_f1_is_order_invariant_and_accuracy_is_trace(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        ) {
            let cls = ["w", "x", "y", "z"];
            let truth: Labels = pairs.iter().enumerate().map(|(i, (t, _))| (i.to_string(), cls[*t].to_string())).collect();
            let pred: Labels = pairs.iter().enumerate().map(|(i, (_, p))| (i.to_string(), cls[*p].to_string())).collect();
            let fwd = compute_report(&truth, &pred, &names(&cls)).unwrap();
            let rev = compute_report(&truth, &pred, &names(&["z", "y", "x", "w"])).unwrap();
            prop_assert!((fwd.macro_f1 - rev.macro_f1).abs() < 1e-12);
            let trace: u64 = (0..4).map(|i| fwd.confusion[i][i]).sum();
            prop_assert_eq!(fwd.micro_accuracy, trace as f64 / pairs.len() as f64);
            prop_assert_eq!(fwd.confusion.iter().flatten().sum::<u64>(), pairs.len() as u64);
            for m in &fwd.per_class {
                prop_assert!((0.0..=1.0).contains(&m.f1));
            }
        }
    }
}
