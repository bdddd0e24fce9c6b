//! Kinesic taxonomy: five functional categories of body movement and the
//! fixed assignment of the twelve DUET interactions to them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{CoreError, Result};

/// Machine-readable copy of [`ACTIVITIES`], shipped for downstream tools.
pub const TAXONOMY_CSV: &str = include_str!("../data/taxonomy.csv");

pub const NUM_ACTIVITIES: usize = 12;
pub const NUM_CATEGORIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinesicCategory {
    Emblem = 0,
    Illustrator = 1,
    Regulator = 2,
    Adaptor = 3,
    AffectDisplay = 4,
}

impl KinesicCategory {
    pub const ALL: [KinesicCategory; NUM_CATEGORIES] = [
        KinesicCategory::Emblem,
        KinesicCategory::Illustrator,
        KinesicCategory::Regulator,
        KinesicCategory::Adaptor,
        KinesicCategory::AffectDisplay,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KinesicCategory::Emblem => "emblem",
            KinesicCategory::Illustrator => "illustrator",
            KinesicCategory::Regulator => "regulator",
            KinesicCategory::Adaptor => "adaptor",
            KinesicCategory::AffectDisplay => "affect_display",
        }
    }
}

impl fmt::Display for KinesicCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityLabel(u8);

impl ActivityLabel {
    pub fn new(value: usize) -> Result<Self> {
        if value < NUM_ACTIVITIES {
            Ok(Self(value as u8))
        } else {
            Err(CoreError::LabelOutOfRange(value))
        }
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        ACTIVITIES[self.value()].0
    }

    pub fn category(self) -> KinesicCategory {
        ACTIVITIES[self.value()].1
    }

    pub fn all() -> impl Iterator<Item = ActivityLabel> {
        (0..NUM_ACTIVITIES as u8).map(ActivityLabel)
    }
}

/// Activity name and category, indexed by activity label.
pub const ACTIVITIES: [(&str, KinesicCategory); NUM_ACTIVITIES] = [
    ("waving in", KinesicCategory::Emblem),
    ("thumbs-up", KinesicCategory::Emblem),
    ("hand waving", KinesicCategory::Emblem),
    ("pointing", KinesicCategory::Illustrator),
    ("showing measurements", KinesicCategory::Illustrator),
    ("nodding", KinesicCategory::Regulator),
    ("drawing circles in the air", KinesicCategory::Regulator),
    ("holding palms out", KinesicCategory::Regulator),
    ("twirling or scratching hair", KinesicCategory::Adaptor),
    ("laughing", KinesicCategory::AffectDisplay),
    ("arm crossing", KinesicCategory::AffectDisplay),
    ("hugging", KinesicCategory::AffectDisplay),
];

pub fn kinesic_of(label: usize) -> Result<KinesicCategory> {
    ACTIVITIES
        .get(label)
        .map(|(_, c)| *c)
        .ok_or(CoreError::LabelOutOfRange(label))
}

/// One `(sample name, category)` pair per record, in record order.
pub fn relabel_bundle(bundle: &DatasetBundle) -> Result<Vec<(String, KinesicCategory)>> {
    bundle
        .records
        .iter()
        .map(|r| Ok((r.frame_dir.clone(), kinesic_of(r.label)?)))
        .collect()
}

/// Number of activities assigned to each category.
pub fn category_sizes() -> [usize; NUM_CATEGORIES] {
    let mut sizes = [0; NUM_CATEGORIES];
    for (_, c) in ACTIVITIES {
        sizes[c.code()] += 1;
    }
    sizes
}

/// Parse the shipped mapping file into `(activity id, name, category)` rows.
pub fn parse_taxonomy_csv(text: &str) -> Result<Vec<(usize, String, KinesicCategory)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CoreError::Config(format!("taxonomy.csv line {}: expected 4 fields", i + 1)));
        }
        let id: usize = fields[0].parse().map_err(|_| CoreError::Config(format!("taxonomy.csv line {}: bad id", i + 1)))?;
        let code: usize = fields[2].parse().map_err(|_| CoreError::Config(format!("taxonomy.csv line {}: bad category id", i + 1)))?;
        let category = KinesicCategory::from_code(code)
            .ok_or_else(|| CoreError::Config(format!("taxonomy.csv line {}: unknown category {code}", i + 1)))?;
        if category.as_str() != fields[3] {
            return Err(CoreError::Config(format!("taxonomy.csv line {}: category name mismatch", i + 1)));
        }
        rows.push((id, fields[1].to_string(), category));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_from_the_table() {
        assert_eq!(kinesic_of(8).unwrap(), KinesicCategory::Adaptor);
        assert_eq!(kinesic_of(11).unwrap(), KinesicCategory::AffectDisplay);
        assert!(matches!(kinesic_of(12), Err(CoreError::LabelOutOfRange(12))));
    }

    #[test]
    fn category_sizes_match_table() {
        assert_eq!(category_sizes(), [3, 2, 3, 1, 3]);
    }

    #[test]
    fn mapping_is_surjective_and_codes_are_stable() {
        for (i, c) in KinesicCategory::ALL.iter().enumerate() {
            assert_eq!(c.code(), i);
            assert!(ACTIVITIES.iter().any(|(_, a)| a == c));
        }
    }

    #[test]
    fn shipped_csv_agrees_with_the_table() {
        let rows = parse_taxonomy_csv(TAXONOMY_CSV).unwrap();
        assert_eq!(rows.len(), NUM_ACTIVITIES);
        for (id, name, category) in rows {
            assert_eq!(ACTIVITIES[id].0, name);
            assert_eq!(ACTIVITIES[id].1, category);
        }
    }

    #[test]
    fn activity_label_range() {
        assert!(ActivityLabel::new(11).is_ok());
        assert!(ActivityLabel::new(12).is_err());
        assert_eq!(ActivityLabel::new(5).unwrap().name(), "nodding");
    }
}
