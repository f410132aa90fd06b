//! Rewards for label-free RL over a group of rollouts.
//!
//! The rollouts of one record are voted (confidence weighted, malformed
//! dimensions excluded) into a quasi ground truth. Each rollout then earns,
//! per dimension, `w(c) * (+1 | -1)` depending on whether its tag matches the
//! voted tag, with `w(c) = c / 5` of a reference confidence `c`; a dimension
//! that cannot be extracted or is outside the closed set earns a flat `-1`.
//! The rollout total is the sum over dimensions.

pub mod service;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{self, AggregationError, CalibrationTables, Strategy};
use crate::annotation::{parse_annotation, AnnotationSet, ConfidenceLevel, ParseOutcome};
use crate::fingerprint;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("no rollouts for record `{0}`")]
    NoRollouts(String),
    #[error("no reference confidence for record `{0}`")]
    MissingReference(String),
    #[error("reference confidence for record `{0}` is not frozen")]
    NotFrozen(String),
    #[error("reference fingerprint changed: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("unknown reward mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// Source of the confidence used as the reward weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Reference levels fixed by an offline pass.
    Frozen,
    /// The confidence each rollout writes for itself.
    #[serde(rename = "self")]
    SelfReported,
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Frozen => "frozen",
            RewardMode::SelfReported => "self",
        })
    }
}

impl FromStr for RewardMode {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "frozen" => Ok(RewardMode::Frozen),
            "self" => Ok(RewardMode::SelfReported),
            other => Err(RewardError::UnknownMode(other.to_string())),
        }
    }
}

/// Linear weight `level / 5`: 1 → 0.2, ..., 5 → 1.0.
pub fn weight(level: ConfidenceLevel) -> f64 {
    f64::from(level.get()) / 5.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceConfidence {
    pub record_id: String,
    pub levels: BTreeMap<String, ConfidenceLevel>,
    pub frozen: bool,
    pub fingerprint: String,
}

impl ReferenceConfidence {
    pub fn new(record_id: impl Into<String>, levels: BTreeMap<String, ConfidenceLevel>) -> Self {
        let record_id = record_id.into();
        let fingerprint = fingerprint::of(&(&record_id, &levels));
        Self {
            record_id,
            levels,
            frozen: true,
            fingerprint,
        }
    }

    /// Level for `dimension`, or the midpoint 3 when the reference lacks it.
    pub fn level_or_default(&self, dimension: &str) -> ConfidenceLevel {
        match self.levels.get(dimension) {
            Some(level) => *level,
            None => {
                log::warn!(
                    "reference for `{}` has no level for `{}`; using 3",
                    self.record_id,
                    dimension
                );
                ConfidenceLevel::saturating(3)
            }
        }
    }
}

/// Runs the offline aggregation over `samples` and freezes the calibrated levels.
pub fn build_reference(
    samples: &[AnnotationSet],
    taxonomy: &Taxonomy,
    tables: Option<&CalibrationTables>,
) -> Result<ReferenceConfidence, RewardError> {
    let record_id = samples
        .first()
        .map(|s| s.record_id.clone())
        .ok_or(AggregationError::EmptySampleList)?;
    let aggregated =
        aggregation::aggregate_record(samples, taxonomy, Strategy::ConfidenceWeighted, tables)?;
    let levels = aggregated
        .into_iter()
        .map(|(dim, agg)| (dim, agg.confidence.level))
        .collect();
    Ok(ReferenceConfidence::new(record_id, levels))
}

/// Reference confidences for a whole RL corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceSet {
    entries: BTreeMap<String, ReferenceConfidence>,
}

impl ReferenceSet {
    pub fn new(entries: impl IntoIterator<Item = ReferenceConfidence>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|r| (r.record_id.clone(), r))
                .collect(),
        }
    }

    pub fn get(&self, record_id: &str) -> Option<&ReferenceConfidence> {
        self.entries.get(record_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReferenceConfidence> {
        self.entries.values()
    }

    /// Hash over every entry's fingerprint, in record order.
    pub fn fingerprint(&self) -> String {
        let parts: Vec<&str> = self.entries.values().map(|r| r.fingerprint.as_str()).collect();
        fingerprint::of(&parts)
    }

    /// Fails when the set differs from the one a run started with.
    pub fn ensure_fingerprint(&self, expected: &str) -> Result<(), RewardError> {
        let found = self.fingerprint();
        if found == expected {
            Ok(())
        } else {
            Err(RewardError::FingerprintMismatch {
                expected: expected.to_string(),
                found,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuasiGroundTruth {
    pub record_id: String,
    pub tags: BTreeMap<String, String>,
}

/// Confidence-weighted vote over the well-formed dimensions of the rollouts.
/// A dimension with no well-formed rollout votes the abstention tag.
pub fn quasi_gt(
    record_id: &str,
    rollouts: &[ParseOutcome],
    taxonomy: &Taxonomy,
) -> Result<QuasiGroundTruth, RewardError> {
    vote_rollouts(record_id, rollouts, taxonomy, Strategy::ConfidenceWeighted)
}

/// Quasi ground truth when every rollout's vote carries the frozen reference
/// level of the dimension instead of its own claim. The weight is the same
/// for all rollouts, so this is a plain count with the usual tie-break, and
/// it cannot be moved by confidences written into the rollouts.
pub fn quasi_gt_frozen(
    record_id: &str,
    rollouts: &[ParseOutcome],
    taxonomy: &Taxonomy,
) -> Result<QuasiGroundTruth, RewardError> {
    vote_rollouts(record_id, rollouts, taxonomy, Strategy::Majority)
}

fn vote_rollouts(
    record_id: &str,
    rollouts: &[ParseOutcome],
    taxonomy: &Taxonomy,
    strategy: Strategy,
) -> Result<QuasiGroundTruth, RewardError> {
    if rollouts.is_empty() {
        return Err(RewardError::NoRollouts(record_id.to_string()));
    }
    let sets: Vec<AnnotationSet> = rollouts
        .iter()
        .enumerate()
        .map(|(i, o)| o.clone().into_partial(record_id, i))
        .collect();
    let mut tags = BTreeMap::new();
    for dim in taxonomy.dimensions() {
        let tag = match aggregation::tally(&sets, dim, strategy) {
            Ok(t) => aggregation::vote(&t).voted_tag,
            Err(AggregationError::NoParticipants(_)) => dim.na_tag.clone(),
            Err(e) => return Err(e.into()),
        };
        tags.insert(dim.id.clone(), tag);
    }
    Ok(QuasiGroundTruth {
        record_id: record_id.to_string(),
        tags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReward {
    pub dimension_id: String,
    pub well_formed: bool,
    /// `None` when the dimension was malformed.
    pub matched: Option<bool>,
    pub weight: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub record_id: String,
    pub rollout_index: usize,
    pub dimensions: Vec<DimensionReward>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn dimension(&self, id: &str) -> Option<&DimensionReward> {
        self.dimensions.iter().find(|d| d.dimension_id == id)
    }
}

fn score_outcome(
    outcome: &ParseOutcome,
    rollout_index: usize,
    qgt: &QuasiGroundTruth,
    taxonomy: &Taxonomy,
    weight_for: impl Fn(&str, ConfidenceLevel) -> ConfidenceLevel,
) -> RewardBreakdown {
    let mut dimensions = Vec::with_capacity(taxonomy.len());
    for dim in taxonomy.dimensions() {
        let entry = match outcome.annotation(&dim.id) {
            Some(ann) => {
                let w = weight(weight_for(&dim.id, ann.confidence));
                let target = qgt.tags.get(&dim.id).unwrap_or(&dim.na_tag);
                let matched = ann.tag == *target;
                DimensionReward {
                    dimension_id: dim.id.clone(),
                    well_formed: true,
                    matched: Some(matched),
                    weight: w,
                    reward: if matched { w } else { -w },
                }
            }
            None => DimensionReward {
                dimension_id: dim.id.clone(),
                well_formed: false,
                matched: None,
                weight: 1.0,
                reward: -1.0,
            },
        };
        dimensions.push(entry);
    }
    let total = dimensions.iter().map(|d| d.reward).sum();
    RewardBreakdown {
        record_id: qgt.record_id.clone(),
        rollout_index,
        dimensions,
        total,
    }
}

/// Rewards one rollout against a quasi ground truth with frozen reference weights.
pub fn reward_rollout(
    rollout_text: &str,
    rollout_index: usize,
    qgt: &QuasiGroundTruth,
    reference: &ReferenceConfidence,
    taxonomy: &Taxonomy,
) -> Result<RewardBreakdown, RewardError> {
    if reference.record_id != qgt.record_id {
        return Err(RewardError::MissingReference(qgt.record_id.clone()));
    }
    let outcome = parse_annotation(rollout_text, taxonomy);
    Ok(score_outcome(&outcome, rollout_index, qgt, taxonomy, |dim, _| {
        reference.level_or_default(dim)
    }))
}

/// Votes the quasi ground truth once from all rollouts, then rewards each
/// rollout. In frozen mode neither the vote nor the weights read the
/// rollouts' own confidences.
pub fn reward_batch(
    record_id: &str,
    rollout_texts: &[String],
    reference: Option<&ReferenceConfidence>,
    mode: RewardMode,
    taxonomy: &Taxonomy,
) -> Result<Vec<RewardBreakdown>, RewardError> {
    if mode == RewardMode::Frozen {
        let reference = reference.ok_or_else(|| RewardError::MissingReference(record_id.into()))?;
        if reference.record_id != record_id {
            return Err(RewardError::MissingReference(record_id.into()));
        }
        if !reference.frozen {
            return Err(RewardError::NotFrozen(record_id.into()));
        }
    }
    let outcomes: Vec<ParseOutcome> = rollout_texts
        .iter()
        .map(|t| parse_annotation(t, taxonomy))
        .collect();
    let qgt = match mode {
        RewardMode::Frozen => quasi_gt_frozen(record_id, &outcomes, taxonomy)?,
        RewardMode::SelfReported => quasi_gt(record_id, &outcomes, taxonomy)?,
    };
    let rewards = outcomes
        .iter()
        .enumerate()
        .map(|(i, outcome)| match (mode, reference) {
            (RewardMode::Frozen, Some(reference)) => {
                score_outcome(outcome, i, &qgt, taxonomy, |dim, _| {
                    reference.level_or_default(dim)
                })
            }
            _ => score_outcome(outcome, i, &qgt, taxonomy, |_, own| own),
        })
        .collect();
    Ok(rewards)
}
