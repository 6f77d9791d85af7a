//! Train/test splitting policies and the leakage audit.
//!
//! Grouping is by `field_id`: two images from the same field share
//! background, light and composition, so a test image whose field also
//! appears in training measures recall of the field rather than the pest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ImageRecord;
use crate::error::{Error, Result};
use crate::jsonl;

pub const DEFAULT_DATE_FALLBACK_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    SameFarmRandom,
    DifferentFarm,
    DateFallback,
}

impl SplitPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPolicy::SameFarmRandom => "same_farm_random",
            SplitPolicy::DifferentFarm => "different_farm",
            SplitPolicy::DateFallback => "date_fallback",
        }
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "same_farm" | "same_farm_random" => Ok(SplitPolicy::SameFarmRandom),
            "different_farm" => Ok(SplitPolicy::DifferentFarm),
            "date_fallback" => Ok(SplitPolicy::DateFallback),
            other => Err(Error::invalid(format!("unknown split policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
    Excluded,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub test_fields: BTreeSet<String>,
    /// Classes split by whole capture dates (date fallback only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub date_classes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub policy: SplitPolicy,
    pub assignment: BTreeMap<String, Role>,
    pub seed: u64,
    pub params: SplitParams,
    /// Human-readable notes about classes that could not be split as asked.
    pub flags: Vec<String>,
    /// Classes with training data but nothing to evaluate on.
    pub train_only_classes: BTreeSet<String>,
}

impl SplitAssignment {
    fn new(policy: SplitPolicy, seed: u64, params: SplitParams) -> Self {
        Self {
            policy,
            assignment: BTreeMap::new(),
            seed,
            params,
            flags: Vec::new(),
            train_only_classes: BTreeSet::new(),
        }
    }

    pub fn role(&self, record_id: &str) -> Option<Role> {
        self.assignment.get(record_id).copied()
    }

    pub fn ids(&self, role: Role) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, role: Role) -> usize {
        self.ids(role).count()
    }

    pub fn hash(&self) -> String {
        jsonl::content_hash(self)
    }

    /// Header line with the policy, then one `(record_id, role)` line per record.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "policy": self.policy,
            "seed": self.seed,
            "params": self.params,
            "flags": self.flags,
            "train_only_classes": self.train_only_classes,
        });
        let rows = self
            .assignment
            .iter()
            .map(|(id, role)| serde_json::json!({ "record_id": id, "role": role }));
        jsonl::write_lines(path, std::iter::once(header).chain(rows))
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            policy: SplitPolicy,
            seed: u64,
            #[serde(default)]
            params: SplitParams,
            #[serde(default)]
            flags: Vec<String>,
            #[serde(default)]
            train_only_classes: BTreeSet<String>,
        }
        #[derive(Deserialize)]
        struct Row {
            record_id: String,
            role: Role,
        }
        let lines = jsonl::read_raw_lines(path)?;
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let mut iter = lines.into_iter();
        let (line, text) = iter
            .next()
            .ok_or_else(|| Error::invalid(format!("{}: empty split file", path.display())))?;
        let header: Header = serde_json::from_str(&text).map_err(|e| parse_err(line, e))?;
        let mut out = SplitAssignment::new(header.policy, header.seed, header.params);
        out.flags = header.flags;
        out.train_only_classes = header.train_only_classes;
        for (line, text) in iter {
            let row: Row = serde_json::from_str(&text).map_err(|e| parse_err(line, e))?;
            out.assignment.insert(row.record_id, row.role);
        }
        Ok(out)
    }
}

fn group_by_class<'a, F>(records: &'a [ImageRecord], class_of: &F) -> BTreeMap<String, Vec<&'a ImageRecord>>
where
    F: Fn(&ImageRecord) -> String,
{
    let mut out: BTreeMap<String, Vec<&ImageRecord>> = BTreeMap::new();
    for r in records {
        out.entry(class_of(r)).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    }
    out
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("test fraction {f} outside (0, 1)")))
    }
}

/// Stratified random split ignoring fields: per class, exactly
/// `round(f * n)` records go to test (at most `n - 1`).
pub fn split_same_farm(records: &[ImageRecord], test_fraction: f64, seed: u64) -> Result<SplitAssignment> {
    split_same_farm_by(records, test_fraction, seed, ImageRecord::identity_class)
}

pub fn split_same_farm_by<F>(records: &[ImageRecord], test_fraction: f64, seed: u64, class_of: F) -> Result<SplitAssignment>
where
    F: Fn(&ImageRecord) -> String,
{
    check_fraction(test_fraction)?;
    let groups = group_by_class(records, &class_of);
    let counts = groups
        .iter()
        .map(|(c, v)| (c.clone(), (test_fraction * v.len() as f64).round() as usize))
        .collect();
    let mut out = split_same_farm_counts_by(records, &counts, seed, class_of)?;
    out.params.test_fraction = Some(test_fraction);
    Ok(out)
}

/// Same-farm split with an explicit test count per class, so that the test
/// set can be sized to match a different-farm split of the same data.
pub fn split_same_farm_counts_by<F>(
    records: &[ImageRecord],
    test_counts: &BTreeMap<String, usize>,
    seed: u64,
    class_of: F,
) -> Result<SplitAssignment>
where
    F: Fn(&ImageRecord) -> String,
{
    if records.is_empty() {
        return Err(Error::invalid("cannot split an empty record set"));
    }
    let mut out = SplitAssignment::new(SplitPolicy::SameFarmRandom, seed, SplitParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (class, mut members) in group_by_class(records, &class_of) {
        let n = members.len();
        if n == 1 {
            out.assignment.insert(members[0].record_id.clone(), Role::Train);
            out.flags.push(format!("class {class:?} has a single record; assigned to train"));
            out.train_only_classes.insert(class);
            continue;
        }
        let n_test = test_counts.get(&class).copied().unwrap_or(0).min(n - 1);
        members.shuffle(&mut rng);
        for (i, r) in members.iter().enumerate() {
            let role = if i < n_test { Role::Test } else { Role::Train };
            out.assignment.insert(r.record_id.clone(), role);
        }
        if n_test == 0 {
            out.train_only_classes.insert(class);
        }
    }
    Ok(out)
}

/// Whole fields go to test; everything else trains.
pub fn split_different_farm(records: &[ImageRecord], test_fields: &BTreeSet<String>) -> Result<SplitAssignment> {
    split_different_farm_by(records, test_fields, ImageRecord::identity_class)
}

pub fn split_different_farm_by<F>(
    records: &[ImageRecord],
    test_fields: &BTreeSet<String>,
    class_of: F,
) -> Result<SplitAssignment>
where
    F: Fn(&ImageRecord) -> String,
{
    if test_fields.is_empty() {
        return Err(Error::invalid("different-farm split needs at least one test field"));
    }
    let params = SplitParams {
        test_fields: test_fields.clone(),
        ..SplitParams::default()
    };
    let mut out = SplitAssignment::new(SplitPolicy::DifferentFarm, 0, params);
    for (class, members) in group_by_class(records, &class_of) {
        assign_by_field(&mut out, &class, &members, test_fields);
    }
    Ok(out)
}

fn assign_by_field(out: &mut SplitAssignment, class: &str, members: &[&ImageRecord], test_fields: &BTreeSet<String>) {
    let n_test = members.iter().filter(|r| test_fields.contains(&r.field_id)).count();
    if n_test == members.len() {
        for r in members {
            out.assignment.insert(r.record_id.clone(), Role::Excluded);
        }
        out.flags.push(format!("class {class:?} has no training data: every field is a test field"));
        return;
    }
    for r in members {
        let role = if test_fields.contains(&r.field_id) { Role::Test } else { Role::Train };
        out.assignment.insert(r.record_id.clone(), role);
    }
    if n_test == 0 {
        out.train_only_classes.insert(class.to_string());
    }
}

/// Within-field split for scarce classes: for every (field, class) the most
/// recent whole capture dates go to test until `test_fraction` of the
/// records is reached, always leaving at least one date for training.
/// Classes outside `date_classes` are split by `test_fields` as in
/// [`split_different_farm`]; with no test fields they train only.
pub fn split_date_fallback(
    records: &[ImageRecord],
    date_classes: &BTreeSet<String>,
    test_fraction: f64,
    test_fields: &BTreeSet<String>,
) -> Result<SplitAssignment> {
    split_date_fallback_by(records, date_classes, test_fraction, test_fields, ImageRecord::identity_class)
}

pub fn split_date_fallback_by<F>(
    records: &[ImageRecord],
    date_classes: &BTreeSet<String>,
    test_fraction: f64,
    test_fields: &BTreeSet<String>,
    class_of: F,
) -> Result<SplitAssignment>
where
    F: Fn(&ImageRecord) -> String,
{
    check_fraction(test_fraction)?;
    let params = SplitParams {
        test_fraction: Some(test_fraction),
        test_fields: test_fields.clone(),
        date_classes: date_classes.clone(),
    };
    let mut out = SplitAssignment::new(SplitPolicy::DateFallback, 0, params);
    for (class, members) in group_by_class(records, &class_of) {
        if !date_classes.contains(&class) {
            assign_by_field(&mut out, &class, &members, test_fields);
            continue;
        }
        let mut by_field: BTreeMap<&str, BTreeMap<NaiveDate, Vec<&ImageRecord>>> = BTreeMap::new();
        for r in &members {
            by_field
                .entry(&r.field_id)
                .or_default()
                .entry(r.captured_at.date())
                .or_default()
                .push(r);
        }
        let mut any_test = false;
        for (field, dates) in by_field {
            let n: usize = dates.values().map(Vec::len).sum();
            let mut test_dates = BTreeSet::new();
            if dates.len() < 2 {
                out.flags
                    .push(format!("class {class:?} in field {field:?} has a single capture date; assigned to train"));
            } else {
                let target = ((test_fraction * n as f64).round() as usize).max(1);
                let mut taken = 0;
                for (date, group) in dates.iter().rev() {
                    if taken >= target || test_dates.len() + 1 == dates.len() {
                        break;
                    }
                    test_dates.insert(*date);
                    taken += group.len();
                }
            }
            for (date, group) in &dates {
                let role = if test_dates.contains(date) { Role::Test } else { Role::Train };
                any_test |= role == Role::Test;
                for r in group {
                    out.assignment.insert(r.record_id.clone(), role);
                }
            }
        }
        if !any_test {
            out.train_only_classes.insert(class);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    FieldInBothSides { field_id: String },
    SharedDate { field_id: String, class: String, date: NaiveDate },
    UnassignedRecord { record_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub policy: SplitPolicy,
    pub assignment_hash: String,
    pub violations: Vec<Violation>,
}

/// Proof that an assignment passed its audit; training refuses to run without one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCertificate {
    pub policy: SplitPolicy,
    pub assignment_hash: String,
}

impl AuditResult {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn certificate(&self) -> Result<AuditCertificate> {
        if !self.is_clean() {
            return Err(Error::Leakage(self.violations.len()));
        }
        Ok(AuditCertificate {
            policy: self.policy,
            assignment_hash: self.assignment_hash.clone(),
        })
    }
}

impl AuditCertificate {
    pub fn covers(&self, assignment: &SplitAssignment) -> bool {
        self.policy == assignment.policy && self.assignment_hash == assignment.hash()
    }
}

/// Checks an assignment against the guarantees of its declared policy.
///
/// Same-farm splits make no field guarantee and only fail on records the
/// assignment does not cover.
pub fn audit_leakage(assignment: &SplitAssignment, records: &[ImageRecord]) -> AuditResult {
    audit_leakage_by(assignment, records, ImageRecord::identity_class)
}

pub fn audit_leakage_by<F>(assignment: &SplitAssignment, records: &[ImageRecord], class_of: F) -> AuditResult
where
    F: Fn(&ImageRecord) -> String,
{
    let mut violations = Vec::new();
    let mut field_sides: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    let mut date_sides: BTreeMap<(&str, String, NaiveDate), (bool, bool)> = BTreeMap::new();

    for r in records {
        let Some(role) = assignment.role(&r.record_id) else {
            violations.push(Violation::UnassignedRecord {
                record_id: r.record_id.clone(),
            });
            continue;
        };
        if role == Role::Excluded {
            continue;
        }
        let is_train = role == Role::Train;
        let class = class_of(r);
        let date_split = assignment.policy == SplitPolicy::DateFallback && assignment.params.date_classes.contains(&class);
        if date_split {
            let e = date_sides.entry((&r.field_id, class, r.captured_at.date())).or_default();
            if is_train { e.0 = true } else { e.1 = true }
        } else {
            let e = field_sides.entry(&r.field_id).or_default();
            if is_train { e.0 = true } else { e.1 = true }
        }
    }

    if assignment.policy != SplitPolicy::SameFarmRandom {
        for (field, sides) in &field_sides {
            if *sides == (true, true) {
                violations.push(Violation::FieldInBothSides {
                    field_id: field.to_string(),
                });
            }
        }
        for ((field, class, date), sides) in date_sides {
            if sides == (true, true) {
                violations.push(Violation::SharedDate {
                    field_id: field.to_string(),
                    class,
                    date,
                });
            }
        }
    }

    AuditResult {
        policy: assignment.policy,
        assignment_hash: assignment.hash(),
        violations,
    }
}
