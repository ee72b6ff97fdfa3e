use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::inference::{mean, sample_variance};
use super::StatsError;
use crate::battery::{Battery, Category, MarkerSignature};
use crate::sentiment::ScoreRecord;

/// A signature-level group (`man/muslim/blind`, `-` for an absent marker)
/// or a category rollup over every prompt carrying one marker
/// (`religion:muslim`).
///
/// Ordering is lexicographic on the rendered key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Signature(MarkerSignature),
    Marker { category: Category, id: String },
}

impl GroupKey {
    pub fn signature(&self) -> Option<&MarkerSignature> {
        match self {
            GroupKey::Signature(s) => Some(s),
            GroupKey::Marker { .. } => None,
        }
    }

    pub fn marker(category: Category, id: &str) -> Self {
        GroupKey::Marker {
            category,
            id: id.to_string(),
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Signature(s) => s.fmt(f),
            GroupKey::Marker { category, id } => write!(f, "{}:{}", category.label(), id),
        }
    }
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((label, id)) = s.split_once(':') {
            let category = match label {
                "noun" => Category::GenderNoun,
                "religion" => Category::Religion,
                "disability" => Category::Disability,
                _ => return Err(format!("unknown rollup category in `{s}`")),
            };
            return Ok(GroupKey::marker(category, id));
        }
        s.parse().map(GroupKey::Signature)
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for GroupKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Signature,
    Category,
}

/// Completion-level scores belonging to one group, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroup {
    pub key: GroupKey,
    pub scores: Vec<f64>,
}

impl ScoreGroup {
    pub fn new(key: GroupKey, scores: Vec<f64>) -> Self {
        Self { key, scores }
    }

    pub fn summary(&self) -> GroupSummary {
        GroupSummary {
            group_key: self.key.clone(),
            n: self.scores.len(),
            mean: if self.scores.is_empty() {
                0.0
            } else {
                mean(&self.scores)
            },
            sd: sample_variance(&self.scores).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_key: GroupKey,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero when `n < 2`.
    pub sd: f64,
}

/// Groups completion scores by signature or by marker rollup.
///
/// Scores are put into `(prompt_id, model_id, index)` order first, so the
/// result does not depend on the order records arrived in.
pub fn aggregate(
    scores: &[ScoreRecord],
    battery: &Battery,
    level: Level,
) -> Result<Vec<ScoreGroup>, StatsError> {
    let mut sorted: Vec<&ScoreRecord> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.prompt_id, &a.model_id, a.index).cmp(&(&b.prompt_id, &b.model_id, b.index))
    });

    let mut orphans: Vec<String> = sorted
        .iter()
        .filter(|s| battery.get(&s.prompt_id).is_none())
        .map(|s| s.prompt_id.clone())
        .collect();
    if !orphans.is_empty() {
        orphans.dedup();
        return Err(StatsError::OrphanPrompts(orphans));
    }

    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for record in sorted {
        let signature = &battery
            .get(&record.prompt_id)
            .expect("checked above")
            .signature;
        match level {
            Level::Signature => groups
                .entry(GroupKey::Signature(signature.clone()))
                .or_default()
                .push(record.value),
            Level::Category => {
                let mut keys = vec![GroupKey::marker(Category::GenderNoun, &signature.noun)];
                if let Some(r) = &signature.religion {
                    keys.push(GroupKey::marker(Category::Religion, r));
                }
                if let Some(d) = &signature.disability {
                    keys.push(GroupKey::marker(Category::Disability, d));
                }
                for key in keys {
                    groups.entry(key).or_default().push(record.value);
                }
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, scores)| ScoreGroup { key, scores })
        .collect())
}
