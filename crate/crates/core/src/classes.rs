//! Class schemes: how `{pest, portion, crop}` triples become training labels.
//!
//! A scheme is an ordered rule list (first match wins) plus a fallback. The
//! identity fallback names a triple `label (portion_crop)`; a scheme with no
//! fallback is closed and rejects anything its rules do not cover.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::catalog::{identity_class_name, known_combinations, Crop, ImageRecord, Portion, Taxon, Taxonomy, HEALTHY};
use crate::error::{Error, Result};
use crate::jsonl;

/// `record_id -> class_name`.
pub type Labels = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRule {
    /// Lower-cased labels this rule accepts: species names and, for merged
    /// classes, the group name.
    pub labels: BTreeSet<String>,
    /// `None` matches every portion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portions: Option<BTreeSet<Portion>>,
    /// `None` matches every crop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crops: Option<BTreeSet<Crop>>,
    pub class_name: String,
}

impl ClassRule {
    pub fn new(
        labels: impl IntoIterator<Item = impl AsRef<str>>,
        portions: Option<&[Portion]>,
        crops: Option<&[Crop]>,
        class_name: impl Into<String>,
    ) -> Self {
        Self {
            labels: labels.into_iter().map(|l| l.as_ref().to_lowercase()).collect(),
            portions: portions.map(|p| p.iter().copied().collect()),
            crops: crops.map(|c| c.iter().copied().collect()),
            class_name: class_name.into(),
        }
    }

    /// Rule named after the `Species (portion_crop)` convention: a part is
    /// left out when the rule spans all of it, and leaf sides read as `leaf`.
    pub fn named(display: &str, labels: &[&str], portions: Option<&[Portion]>, crops: Option<&[Crop]>) -> Self {
        let portion_part = portions.map(|ps| {
            let names: BTreeSet<&str> = ps.iter().map(|p| p.display_name()).collect();
            names.into_iter().collect::<Vec<_>>().join("/")
        });
        let crop_part = crops.map(|cs| cs.iter().map(|c| c.as_str()).collect::<Vec<_>>().join("/"));
        let name = match (portion_part, crop_part) {
            (Some(p), Some(c)) => format!("{display} ({p}_{c})"),
            (Some(p), None) => format!("{display} ({p})"),
            (None, Some(c)) => format!("{display} ({c})"),
            (None, None) => display.to_string(),
        };
        Self::new(labels, portions, crops, name)
    }

    pub fn matches(&self, label: &str, portion: Portion, crop: Crop) -> bool {
        self.labels.contains(&label.to_lowercase())
            && self.portions.as_ref().is_none_or(|p| p.contains(&portion))
            && self.crops.as_ref().is_none_or(|c| c.contains(&crop))
    }

    fn overlaps(&self, other: &ClassRule) -> bool {
        fn meet<T: Ord>(a: &Option<BTreeSet<T>>, b: &Option<BTreeSet<T>>) -> bool {
            match (a, b) {
                (Some(a), Some(b)) => !a.is_disjoint(b),
                _ => true,
            }
        }
        !self.labels.is_disjoint(&other.labels) && meet(&self.portions, &other.portions) && meet(&self.crops, &other.crops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Identity,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub rules: Vec<ClassRule>,
    pub fallback: Fallback,
}

impl ClassScheme {
    /// Every triple is its own class.
    pub fn identity() -> Self {
        Self {
            rules: Vec::new(),
            fallback: Fallback::Identity,
        }
    }

    /// Validates the rules: no two overlapping rules may disagree on the
    /// class name, and a rule may only merge species of one integration group.
    pub fn new(rules: Vec<ClassRule>, fallback: Fallback, taxonomy: &Taxonomy) -> Result<Self> {
        for rule in &rules {
            if rule.labels.is_empty() {
                return Err(Error::Scheme(format!("rule {:?} matches no label", rule.class_name)));
            }
            let mut groups = BTreeSet::new();
            for label in &rule.labels {
                match taxonomy.resolve(label) {
                    None => {
                        return Err(Error::Scheme(format!(
                            "rule {:?} names unknown label {label:?}",
                            rule.class_name
                        )))
                    }
                    Some(Taxon::Healthy) => groups.insert(HEALTHY.to_string()),
                    Some(t) => groups.insert(t.group().unwrap_or_default().to_string()),
                };
            }
            if groups.len() > 1 {
                return Err(Error::Scheme(format!(
                    "rule {:?} merges labels from different integration groups: {groups:?}",
                    rule.class_name
                )));
            }
        }
        for (i, a) in rules.iter().enumerate() {
            for b in &rules[i + 1..] {
                if a.class_name != b.class_name && a.overlaps(b) {
                    return Err(Error::Scheme(format!(
                        "rules {:?} and {:?} overlap",
                        a.class_name, b.class_name
                    )));
                }
            }
        }
        Ok(Self { rules, fallback })
    }

    pub fn class_of(&self, label: &str, portion: Portion, crop: Crop) -> Result<String> {
        if let Some(rule) = self.rules.iter().find(|r| r.matches(label, portion, crop)) {
            return Ok(rule.class_name.clone());
        }
        match self.fallback {
            Fallback::Identity => Ok(identity_class_name(label, portion, crop)),
            Fallback::None => Err(Error::UncoveredTriple {
                label: label.to_string(),
                portion: portion.to_string(),
                crop: crop.to_string(),
            }),
        }
    }

    pub fn class_of_record(&self, record: &ImageRecord) -> Result<String> {
        self.class_of(&record.pest_label, record.portion, record.crop)
    }

    /// Class names declared by the rules, in rule order.
    pub fn rule_classes(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rules
            .iter()
            .filter(|r| seen.insert(r.class_name.as_str()))
            .map(|r| r.class_name.clone())
            .collect()
    }

    pub fn hash(&self) -> String {
        jsonl::content_hash(self)
    }

    /// Header line with the fallback, then one rule per line in match order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({ "fallback": self.fallback });
        let rules = self.rules.iter().map(|r| serde_json::to_value(r).expect("rule serializes"));
        jsonl::write_lines(path, std::iter::once(header).chain(rules))
    }

    pub fn load(path: &Path, taxonomy: &Taxonomy) -> Result<Self> {
        let mut values: Vec<serde_json::Value> = jsonl::read_lines(path)?;
        if values.is_empty() {
            return Err(Error::Scheme(format!("{}: empty scheme file", path.display())));
        }
        let header = values.remove(0);
        let fallback = serde_json::from_value(header["fallback"].clone())?;
        let rules = values
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<Vec<ClassRule>, _>>()?;
        Self::new(rules, fallback, taxonomy)
    }

    /// The 25 classes of the main experiment, covering all 78 known triples.
    pub fn main_framework(taxonomy: &Taxonomy) -> Self {
        use Crop::{Cucumber, Eggplant, Strawberry, Tomato};
        use Portion::{Flower, Fruit};
        let leaf = Some(&Portion::LEAF[..]);
        let with_group = |group: &str| -> Vec<String> {
            let mut labels: Vec<String> = taxonomy.expand(group).iter().map(|s| s.to_string()).collect();
            labels.push(group.to_string());
            labels
        };
        let rule = |labels: Vec<String>, portions: Option<&[Portion]>, crops: Option<&[Crop]>, name: &str| {
            ClassRule::new(labels, portions, crops, name)
        };
        let broad = with_group("broad mite");
        let mealy = with_group("mealybug");
        let thrips = with_group("thrips");
        let worm = with_group("cotton bollworm");
        let healthy = vec![HEALTHY.to_string()];
        let rules = vec![
            rule(broad.clone(), Some(&[Fruit]), Some(&[Strawberry]), "Broad mite (fruit_strawberry)"),
            rule(broad.clone(), Some(&[Fruit]), Some(&[Eggplant]), "Broad mite (fruit_eggplant)"),
            rule(broad, leaf, None, "Broad mite (leaf)"),
            rule(with_group("spider mite"), leaf, None, "Spider mites (leaf)"),
            rule(with_group("tomato russet mite"), leaf, Some(&[Tomato]), "Tomato russet mite (leaf_tomato)"),
            rule(with_group("whitefly"), None, None, "Whitefly"),
            rule(with_group("aphid"), None, None, "Aphid"),
            rule(mealy.clone(), Some(&[Fruit]), Some(&[Eggplant]), "Mealybug (fruit_eggplant)"),
            rule(mealy, leaf, Some(&[Eggplant]), "Mealybug (leaf_eggplant)"),
            rule(thrips.clone(), Some(&[Fruit]), Some(&[Strawberry]), "Thrips (fruit_strawberry)"),
            rule(thrips.clone(), Some(&[Fruit]), Some(&[Tomato]), "Thrips (fruit_tomato)"),
            rule(thrips.clone(), Some(&[Flower]), Some(&[Strawberry]), "Thrips (flower_strawberry)"),
            rule(thrips, leaf, None, "Thrips (leaf)"),
            rule(with_group("hadda beetle"), leaf, Some(&[Eggplant]), "Hadda beetle (leaf_eggplant)"),
            rule(with_group("leaf miner"), leaf, None, "Leafminer (leaf)"),
            rule(worm.clone(), Some(&[Fruit]), Some(&[Tomato]), "Cotton bollworm (fruit_tomato)"),
            rule(worm, Some(&[Fruit]), Some(&[Eggplant]), "Cotton bollworm (fruit_eggplant)"),
            rule(with_group("tobacco cutworm"), leaf, None, "Tobacco cutworm (leaf)"),
            rule(healthy.clone(), Some(&[Fruit]), Some(&[Strawberry]), "Healthy (fruit_strawberry)"),
            rule(healthy.clone(), Some(&[Fruit]), Some(&[Cucumber]), "Healthy (fruit_cucumber)"),
            rule(healthy.clone(), Some(&[Fruit]), Some(&[Tomato]), "Healthy (fruit_tomato)"),
            rule(healthy.clone(), Some(&[Fruit]), Some(&[Eggplant]), "Healthy (fruit_eggplant)"),
            rule(healthy.clone(), Some(&[Flower]), Some(&[Strawberry]), "Healthy (flower_strawberry)"),
            rule(healthy.clone(), Some(&[Flower]), Some(&[Cucumber]), "Healthy (flower_cucumber)"),
            rule(healthy, leaf, None, "Healthy (leaf)"),
        ];
        Self::new(rules, Fallback::None, taxonomy).expect("main scheme is consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    Integration,
    CrossCropHealthy,
    CrossCropFull,
    Combined,
}

impl Scenario {
    pub fn integrates(self) -> bool {
        matches!(self, Scenario::Integration | Scenario::Combined)
    }

    pub fn is_cross_crop(self) -> bool {
        matches!(self, Scenario::CrossCropHealthy | Scenario::CrossCropFull | Scenario::Combined)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Scenario::Baseline),
            "integration" => Ok(Scenario::Integration),
            "cross_crop_healthy" => Ok(Scenario::CrossCropHealthy),
            "cross_crop_full" => Ok(Scenario::CrossCropFull),
            "combined" => Ok(Scenario::Combined),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub target_crop: Crop,
    #[serde(default)]
    pub donor_crops: BTreeSet<Crop>,
    /// Target-scheme classes that receive donor images (full cross-crop only).
    #[serde(default)]
    pub donor_classes: BTreeSet<String>,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, target_crop: Crop) -> Self {
        Self {
            scenario,
            target_crop,
            donor_crops: BTreeSet::new(),
            donor_classes: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scenario.is_cross_crop() && (!self.donor_crops.is_empty() || !self.donor_classes.is_empty()) {
            return Err(Error::invalid("donor settings given for a scenario without cross-crop training"));
        }
        if self.donor_crops.contains(&self.target_crop) {
            return Err(Error::invalid("target crop cannot also be a donor crop"));
        }
        Ok(())
    }
}

/// Integration merges every multi-species group into one class named after
/// the group; other scenarios keep identity classes.
pub fn build_class_scheme(taxonomy: &Taxonomy, scenario: &ScenarioConfig) -> Result<ClassScheme> {
    scenario.validate()?;
    if !scenario.scenario.integrates() {
        return Ok(ClassScheme::identity());
    }
    let rules = taxonomy
        .groups()
        .iter()
        .filter(|g| g.species.len() > 1)
        .map(|g| {
            let labels = g.species.iter().chain(std::iter::once(&g.name));
            ClassRule::new(labels, None, None, g.name.clone())
        })
        .collect();
    ClassScheme::new(rules, Fallback::Identity, taxonomy)
}

/// Labels every record; the first uncovered triple is fatal.
pub fn apply_scheme(records: &[ImageRecord], scheme: &ClassScheme) -> Result<Labels> {
    records
        .iter()
        .map(|r| Ok((r.record_id.clone(), scheme.class_of_record(r)?)))
        .collect()
}

pub fn class_counts(labels: &Labels) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for class in labels.values() {
        *out.entry(class.clone()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComposedDataset {
    pub train: Labels,
    pub test: Labels,
    /// Donor records added to training, with the crop relabelled to the target.
    pub donors: Vec<ImageRecord>,
    pub warnings: Vec<String>,
}

/// Adds donor-crop images to the target's training set.
///
/// Donors are relabelled to the target crop before classification, so a
/// tomato healthy leaf supplements the cucumber healthy-leaf class. The
/// test set is never touched.
pub fn compose_cross_crop(
    target_train: &[ImageRecord],
    target_test: &[ImageRecord],
    donor_records: &[ImageRecord],
    scheme: &ClassScheme,
    scenario: &ScenarioConfig,
) -> Result<ComposedDataset> {
    scenario.validate()?;
    let mut out = ComposedDataset {
        train: apply_scheme(target_train, scheme)?,
        test: apply_scheme(target_test, scheme)?,
        ..ComposedDataset::default()
    };
    if !scenario.scenario.is_cross_crop() {
        return Ok(out);
    }
    let target_classes: BTreeSet<String> = out.train.values().chain(out.test.values()).cloned().collect();
    let mut missing: BTreeMap<String, usize> = BTreeMap::new();
    for donor in donor_records {
        if donor.crop == scenario.target_crop
            || (!scenario.donor_crops.is_empty() && !scenario.donor_crops.contains(&donor.crop))
        {
            continue;
        }
        let wanted = match scenario.scenario {
            Scenario::CrossCropHealthy => donor.pest_label.eq_ignore_ascii_case(HEALTHY),
            _ => true,
        };
        if !wanted {
            continue;
        }
        let mut moved = donor.clone();
        moved.crop = scenario.target_crop;
        let class = match scheme.class_of_record(&moved) {
            Ok(c) => c,
            Err(_) => {
                *missing.entry(moved.identity_class()).or_insert(0) += 1;
                continue;
            }
        };
        if !target_classes.contains(&class) {
            *missing.entry(class).or_insert(0) += 1;
            continue;
        }
        if scenario.scenario != Scenario::CrossCropHealthy && !scenario.donor_classes.contains(&class) {
            continue;
        }
        if out.train.contains_key(&moved.record_id) || out.test.contains_key(&moved.record_id) {
            return Err(Error::invalid(format!(
                "donor record_id {:?} collides with a target record",
                moved.record_id
            )));
        }
        out.train.insert(moved.record_id.clone(), class);
        out.donors.push(moved);
    }
    for (class, n) in missing {
        let msg = format!("skipped {n} donor record(s) of class {class:?} absent from the target scheme");
        warn!("{msg}");
        out.warnings.push(msg);
    }
    Ok(out)
}

/// Every known triple resolved through a scheme; used to check closed schemes.
pub fn coverage(scheme: &ClassScheme) -> Vec<(String, Result<String>)> {
    known_combinations()
        .into_iter()
        .map(|c| {
            let key = identity_class_name(c.pest, c.portion, c.crop);
            (key, scheme.class_of(c.pest, c.portion, c.crop))
        })
        .collect()
}
