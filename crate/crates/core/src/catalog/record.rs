use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crop {
    Tomato,
    Strawberry,
    Cucumber,
    Eggplant,
}

impl Crop {
    pub const ALL: [Crop; 4] = [Crop::Tomato, Crop::Strawberry, Crop::Cucumber, Crop::Eggplant];

    pub fn as_str(self) -> &'static str {
        match self {
            Crop::Tomato => "tomato",
            Crop::Strawberry => "strawberry",
            Crop::Cucumber => "cucumber",
            Crop::Eggplant => "eggplant",
        }
    }
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Crop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Crop::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown crop {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Portion {
    LeafFront,
    LeafBack,
    Fruit,
    Flower,
}

impl Portion {
    pub const ALL: [Portion; 4] = [
        Portion::LeafFront,
        Portion::LeafBack,
        Portion::Fruit,
        Portion::Flower,
    ];
    pub const LEAF: [Portion; 2] = [Portion::LeafFront, Portion::LeafBack];

    pub fn as_str(self) -> &'static str {
        match self {
            Portion::LeafFront => "leaf_front",
            Portion::LeafBack => "leaf_back",
            Portion::Fruit => "fruit",
            Portion::Flower => "flower",
        }
    }

    /// Name used in class labels. Leaf sides are never distinguished there.
    pub fn display_name(self) -> &'static str {
        match self {
            Portion::LeafFront | Portion::LeafBack => "leaf",
            Portion::Fruit => "fruit",
            Portion::Flower => "flower",
        }
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, Portion::LeafFront | Portion::LeafBack)
    }
}

impl fmt::Display for Portion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Portion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Portion::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown portion {s:?}")))
    }
}

/// Capture time as recorded by the device (wall clock, no zone).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub NaiveDateTime);

impl Timestamp {
    const FORMAT: &'static str = "%Y-%m-%dT%H:%M:%S%.f";

    /// Parses ISO-8601. A zone offset, if present, is dropped after
    /// converting to the local wall-clock time it was written in.
    pub fn parse(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.naive_local()));
        }
        for fmt in [Self::FORMAT, "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(dt));
            }
        }
        Err(Error::invalid(format!("unparseable timestamp {s:?}")))
    }

    /// Current UTC time, truncated to milliseconds.
    pub fn now() -> Self {
        let now = chrono::Utc::now().naive_utc();
        Timestamp(now.with_nanosecond(now.nanosecond() / 1_000_000 * 1_000_000).unwrap_or(now))
    }

    pub fn date(self) -> NaiveDate {
        self.0.date()
    }

    /// Seconds since the Unix epoch, with sub-second precision.
    pub fn seconds(self) -> f64 {
        let utc = self.0.and_utc();
        utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(Self::FORMAT))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One captured photo and its collection metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub uri: String,
    pub crop: Crop,
    pub portion: Portion,
    /// Species common name, integration-group name, or `healthy`.
    pub pest_label: String,
    /// Farm field; the grouping key for leakage-free splits.
    pub field_id: String,
    pub captured_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    pub width_px: u32,
    pub height_px: u32,
}

impl ImageRecord {
    /// Identity class name, `label (portion_crop)`.
    pub fn identity_class(&self) -> String {
        identity_class_name(&self.pest_label, self.portion, self.crop)
    }
}

pub(crate) fn identity_class_name(label: &str, portion: Portion, crop: Crop) -> String {
    format!("{label} ({}_{crop})", portion.display_name())
}
