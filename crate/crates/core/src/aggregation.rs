//! Voting over parallel samples and equal-mass confidence calibration.
//!
//! For a dimension and candidate tag `t`, the confidence-weighted score is the
//! sum of confidences of the samples that chose `t`; the voted tag is the
//! argmax. Ties go to the abstention tag when it is among the tied tags, and
//! otherwise to the tag listed first in the taxonomy.
//!
//! Winning scores are then mapped onto a balanced 1..=5 level with one
//! [`CalibrationTable`] per dimension: four cut points taken at the 20/40/60/80
//! percent ranks of the observed scores.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, ConfidenceLevel};
use crate::fingerprint;
use crate::taxonomy::{Taxonomy, TaxonomyDimension};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("no samples to aggregate")]
    EmptySampleList,
    #[error("samples mix record ids `{0}` and `{1}`")]
    MixedRecordIds(String, String),
    #[error("no well-formed sample for dimension `{0}`")]
    NoParticipants(String),
    #[error("calibration for `{dimension}` needs at least 5 scores, got {got}")]
    TooFewSamples { dimension: String, got: usize },
    #[error("unknown voting strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ConfidenceWeighted,
    Majority,
    SingleSample,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ConfidenceWeighted => "confidence_weighted",
            Strategy::Majority => "majority",
            Strategy::SingleSample => "single_sample",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "confidence_weighted" | "confidence" => Ok(Strategy::ConfidenceWeighted),
            "majority" => Ok(Strategy::Majority),
            "single_sample" | "single" => Ok(Strategy::SingleSample),
            other => Err(AggregationError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyEntry {
    pub tag: String,
    pub score: u32,
    pub votes: u32,
}

/// Per-tag scores for one dimension. Entries are in taxonomy order and only
/// cover tags that received at least one vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub dimension_id: String,
    pub na_tag: String,
    pub entries: Vec<TallyEntry>,
    pub m_samples: u32,
    pub strategy: Strategy,
}

impl VoteTally {
    pub fn score(&self, tag: &str) -> u32 {
        self.entries
            .iter()
            .find(|e| e.tag == tag)
            .map_or(0, |e| e.score)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub dimension_id: String,
    pub voted_tag: String,
    pub winning_score: u32,
    pub strategy: Strategy,
}

fn check_record_ids(samples: &[AnnotationSet]) -> Result<(), AggregationError> {
    let first = samples.first().ok_or(AggregationError::EmptySampleList)?;
    if let Some(other) = samples.iter().find(|s| s.record_id != first.record_id) {
        return Err(AggregationError::MixedRecordIds(
            first.record_id.clone(),
            other.record_id.clone(),
        ));
    }
    Ok(())
}

/// Tallies one dimension. Samples without a well-formed annotation for the
/// dimension do not participate.
pub fn tally(
    samples: &[AnnotationSet],
    dim: &TaxonomyDimension,
    strategy: Strategy,
) -> Result<VoteTally, AggregationError> {
    check_record_ids(samples)?;
    let considered = match strategy {
        Strategy::SingleSample => &samples[..1],
        _ => samples,
    };
    let mut by_position: BTreeMap<usize, TallyEntry> = BTreeMap::new();
    let mut participants = 0u32;
    for sample in considered {
        let Some(ann) = sample.get(&dim.id) else {
            continue;
        };
        let Some(pos) = dim.position(&ann.tag) else {
            continue;
        };
        participants += 1;
        let weight = match strategy {
            Strategy::Majority => 1,
            Strategy::ConfidenceWeighted | Strategy::SingleSample => {
                u32::from(ann.confidence.get())
            }
        };
        let entry = by_position.entry(pos).or_insert_with(|| TallyEntry {
            tag: dim.tags[pos].clone(),
            score: 0,
            votes: 0,
        });
        entry.score += weight;
        entry.votes += 1;
    }
    if participants == 0 {
        return Err(AggregationError::NoParticipants(dim.id.clone()));
    }
    Ok(VoteTally {
        dimension_id: dim.id.clone(),
        na_tag: dim.na_tag.clone(),
        entries: by_position.into_values().collect(),
        m_samples: participants,
        strategy,
    })
}

/// Argmax over the tally with the abstention-first, then taxonomy-order tie-break.
pub fn vote(tally: &VoteTally) -> VoteResult {
    let best = tally.entries.iter().map(|e| e.score).max().unwrap_or(0);
    let tied: Vec<&TallyEntry> = tally.entries.iter().filter(|e| e.score == best).collect();
    let winner = tied
        .iter()
        .find(|e| e.tag == tally.na_tag)
        .or_else(|| tied.first())
        .map_or_else(|| tally.na_tag.clone(), |e| e.tag.clone());
    VoteResult {
        dimension_id: tally.dimension_id.clone(),
        voted_tag: winner,
        winning_score: best,
        strategy: tally.strategy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub dimension_id: String,
    pub boundaries: [f64; 4],
    pub sample_count: usize,
    pub fingerprint: String,
}

impl CalibrationTable {
    pub fn new(dimension_id: impl Into<String>, boundaries: [f64; 4], sample_count: usize) -> Self {
        let dimension_id = dimension_id.into();
        let fingerprint = fingerprint::of(&(&dimension_id, boundaries, sample_count));
        Self {
            dimension_id,
            boundaries,
            sample_count,
            fingerprint,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.boundaries.iter().all(|b| *b == self.boundaries[0])
    }
}

/// Fits cut points at the 20/40/60/80 percent ranks.
///
/// Cut point `j` is the largest score of the `j`-th fifth of the stably sorted
/// list, i.e. `sorted[ceil(j * n / 5) - 1]`, so with distinct scores every
/// bin receives `floor(n/5)` or `ceil(n/5)` of them.
pub fn fit_calibration(
    scores: &[f64],
    dimension_id: &str,
) -> Result<CalibrationTable, AggregationError> {
    let n = scores.len();
    if n < 5 {
        return Err(AggregationError::TooFewSamples {
            dimension: dimension_id.to_string(),
            got: n,
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut boundaries = [0.0; 4];
    for (j, slot) in boundaries.iter_mut().enumerate() {
        let rank = ((j + 1) * n).div_ceil(5);
        *slot = sorted[rank - 1];
    }
    Ok(CalibrationTable::new(dimension_id, boundaries, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConfidence {
    pub dimension_id: String,
    pub level: ConfidenceLevel,
    pub raw_score: f64,
    /// Fingerprint of the table used; `None` when no table was available.
    pub bin_boundaries_ref: Option<String>,
}

/// Level = 1 + number of cut points strictly below `raw`.
///
/// A score equal to one or more cut points sits where several bins meet; it
/// takes the lower middle of those bins. For a single cut point that is the
/// lower bin, and when all four cut points coincide it is level 3.
pub fn apply_calibration(table: &CalibrationTable, raw: f64) -> CalibratedConfidence {
    let below = table.boundaries.iter().filter(|b| **b < raw).count();
    let equal = table.boundaries.iter().filter(|b| **b == raw).count();
    let level = if equal == 0 {
        below + 1
    } else {
        let lowest = below + 1;
        let highest = below + equal + 1;
        (lowest + highest) / 2
    };
    CalibratedConfidence {
        dimension_id: table.dimension_id.clone(),
        level: ConfidenceLevel::saturating(level as i64),
        raw_score: raw,
        bin_boundaries_ref: Some(table.fingerprint.clone()),
    }
}

/// Level without a calibration table: mean confidence of the participating
/// samples, rounded half up and clamped to 1..=5.
fn uncalibrated_level(score: u32, participants: u32) -> ConfidenceLevel {
    if participants == 0 {
        return ConfidenceLevel::MIN;
    }
    let rounded = (2 * u64::from(score) + u64::from(participants)) / (2 * u64::from(participants));
    ConfidenceLevel::saturating(rounded as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDimension {
    pub vote: VoteResult,
    pub confidence: CalibratedConfidence,
    pub evidence: String,
}

pub type CalibrationTables = BTreeMap<String, CalibrationTable>;

/// Votes, calibrates and picks evidence for every dimension of one record.
///
/// A dimension with no well-formed sample votes the abstention tag with score 0.
/// Evidence comes from the highest-confidence sample among those that voted for
/// the winner, lowest `sample_index` first on ties.
pub fn aggregate_record(
    samples: &[AnnotationSet],
    taxonomy: &Taxonomy,
    strategy: Strategy,
    tables: Option<&CalibrationTables>,
) -> Result<BTreeMap<String, AggregatedDimension>, AggregationError> {
    check_record_ids(samples)?;
    let mut out = BTreeMap::new();
    for dim in taxonomy.dimensions() {
        let (result, participants) = match tally(samples, dim, strategy) {
            Ok(t) => (vote(&t), t.m_samples),
            Err(AggregationError::NoParticipants(_)) => (
                VoteResult {
                    dimension_id: dim.id.clone(),
                    voted_tag: dim.na_tag.clone(),
                    winning_score: 0,
                    strategy,
                },
                0,
            ),
            Err(e) => return Err(e),
        };
        let raw = f64::from(result.winning_score);
        let confidence = match tables.and_then(|t| t.get(&dim.id)) {
            Some(table) => apply_calibration(table, raw),
            None => CalibratedConfidence {
                dimension_id: dim.id.clone(),
                level: uncalibrated_level(result.winning_score, participants),
                raw_score: raw,
                bin_boundaries_ref: None,
            },
        };
        let voters = match strategy {
            Strategy::SingleSample => &samples[..1],
            _ => samples,
        };
        let evidence = voters
            .iter()
            .filter_map(|s| s.get(&dim.id).map(|a| (s.sample_index, a)))
            .filter(|(_, a)| a.tag == result.voted_tag)
            .min_by(|(ia, a), (ib, b)| b.confidence.cmp(&a.confidence).then(ia.cmp(ib)))
            .map(|(_, a)| a.evidence.clone())
            .unwrap_or_default();
        out.insert(
            dim.id.clone(),
            AggregatedDimension {
                vote: result,
                confidence,
                evidence,
            },
        );
    }
    Ok(out)
}

/// Fits one table per dimension from the winning scores of many records.
pub fn fit_tables<'a, I>(
    results: I,
    taxonomy: &Taxonomy,
) -> Result<CalibrationTables, AggregationError>
where
    I: IntoIterator<Item = &'a BTreeMap<String, AggregatedDimension>>,
{
    let mut scores: BTreeMap<&str, Vec<f64>> = taxonomy.ids().map(|id| (id, Vec::new())).collect();
    for record in results {
        for (dim, agg) in record {
            if let Some(list) = scores.get_mut(dim.as_str()) {
                list.push(agg.confidence.raw_score);
            }
        }
    }
    scores
        .into_iter()
        .map(|(dim, list)| fit_calibration(&list, dim).map(|t| (dim.to_string(), t)))
        .collect()
}

/// Re-levels already voted results with `tables`.
pub fn recalibrate(
    record: &mut BTreeMap<String, AggregatedDimension>,
    tables: &CalibrationTables,
) {
    for (dim, agg) in record.iter_mut() {
        if let Some(table) = tables.get(dim) {
            agg.confidence = apply_calibration(table, agg.confidence.raw_score);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::DimensionAnnotation;

    fn lv(n: i64) -> ConfidenceLevel {
        ConfidenceLevel::new(n).unwrap()
    }

    fn gender_samples(votes: &[(&str, i64)]) -> Vec<AnnotationSet> {
        let t = Taxonomy::builtin();
        votes
            .iter()
            .enumerate()
            .map(|(i, (tag, c))| {
                AnnotationSet::partial(
                    "u1",
                    i,
                    [DimensionAnnotation::new("gender", *tag, lv(*c), format!("ev{i}-{c}"))],
                    &t,
                )
                .unwrap()
            })
            .collect()
    }

    fn gender() -> TaxonomyDimension {
        Taxonomy::builtin().dimension("gender").unwrap().clone()
    }

    #[test]
    fn weighted_and_majority_tallies() {
        let s = gender_samples(&[("Male", 5), ("Male", 4), ("Female", 3)]);
        let t = tally(&s, &gender(), Strategy::ConfidenceWeighted).unwrap();
        assert_eq!((t.score("Male"), t.score("Female")), (9, 3));
        let r = vote(&t);
        assert_eq!((r.voted_tag.as_str(), r.winning_score), ("Male", 9));
        let t = tally(&s, &gender(), Strategy::Majority).unwrap();
        assert_eq!((t.score("Male"), t.score("Female")), (2, 1));
        let s = gender_samples(&[("Female", 2), ("Female", 2), ("Female", 2)]);
        let t = tally(&s, &gender(), Strategy::ConfidenceWeighted).unwrap();
        assert_eq!(t.score("Female"), 6);
        assert_eq!(t.entries.len(), 1);
    }

    #[test]
    fn single_sample_uses_first_only() {
        let s = gender_samples(&[("Female", 2), ("Male", 5), ("Male", 5)]);
        let t = tally(&s, &gender(), Strategy::SingleSample).unwrap();
        assert_eq!(t.m_samples, 1);
        assert_eq!(vote(&t).voted_tag, "Female");
    }

    #[test]
    fn tie_breaks() {
        let s = gender_samples(&[("Male", 3), ("Female", 3)]);
        let r = vote(&tally(&s, &gender(), Strategy::ConfidenceWeighted).unwrap());
        assert_eq!((r.voted_tag.as_str(), r.winning_score), ("Female", 3));
        let s = gender_samples(&[("Male", 3), ("Unknown(NA)", 3)]);
        let r = vote(&tally(&s, &gender(), Strategy::ConfidenceWeighted).unwrap());
        assert_eq!(r.voted_tag, "Unknown(NA)");
    }

    #[test]
    fn tally_errors() {
        assert_eq!(
            tally(&[], &gender(), Strategy::Majority).unwrap_err(),
            AggregationError::EmptySampleList
        );
        let mut s = gender_samples(&[("Male", 3), ("Female", 3)]);
        s[1].record_id = "u2".into();
        assert!(matches!(
            tally(&s, &gender(), Strategy::Majority).unwrap_err(),
            AggregationError::MixedRecordIds(..)
        ));
    }

    #[test]
    fn calibration_even_bins() {
        let scores: Vec<f64> = (0..10).map(|i| 10.0 + 2.0 * i as f64).collect();
        let table = fit_calibration(&scores, "gender").unwrap();
        let mut counts = [0; 5];
        for s in &scores {
            counts[usize::from(apply_calibration(&table, *s).level.get()) - 1] += 1;
        }
        assert_eq!(counts, [2; 5]);
    }

    #[test]
    fn calibration_uniform_range_boundaries() {
        let scores: Vec<f64> = (10..=50).map(f64::from).collect();
        let table = fit_calibration(&scores, "age").unwrap();
        assert_eq!(table.boundaries, [18.0, 26.0, 34.0, 42.0]);
    }

    #[test]
    fn calibration_degenerate() {
        let table = fit_calibration(&[6.0; 5], "age").unwrap();
        assert!(table.is_degenerate());
        assert_eq!(apply_calibration(&table, 6.0).level.get(), 3);
        assert_eq!(apply_calibration(&table, 5.0).level.get(), 1);
        assert_eq!(apply_calibration(&table, 7.0).level.get(), 5);
        assert!(matches!(
            fit_calibration(&[1.0; 4], "age"),
            Err(AggregationError::TooFewSamples { got: 4, .. })
        ));
    }

    #[test]
    fn apply_boundary_rules() {
        let table = CalibrationTable::new("age", [18.0, 26.0, 34.0, 42.0], 41);
        let level = |raw| apply_calibration(&table, raw).level.get();
        assert_eq!(level(10.0), 1);
        assert_eq!(level(26.0), 2);
        assert_eq!(level(50.0), 5);
        assert_eq!(level(18.0), 1);
        assert_eq!(level(42.5), 5);
    }

    #[test]
    fn aggregate_unanimous_with_table() {
        let t = Taxonomy::builtin();
        let s = gender_samples(&[("Female", 2), ("Female", 2), ("Female", 2)]);
        let table = CalibrationTable::new("gender", [8.0, 12.0, 20.0, 26.0], 100);
        let tables: CalibrationTables = [("gender".to_string(), table)].into_iter().collect();
        let agg = aggregate_record(&s, &t, Strategy::ConfidenceWeighted, Some(&tables)).unwrap();
        let g = &agg["gender"];
        assert_eq!(g.vote.voted_tag, "Female");
        assert_eq!(g.confidence.level.get(), 1);
    }

    #[test]
    fn aggregate_single_no_table_passthrough() {
        let t = Taxonomy::builtin();
        let s = gender_samples(&[("Male", 4)]);
        let agg = aggregate_record(&s, &t, Strategy::ConfidenceWeighted, None).unwrap();
        assert_eq!(agg["gender"].confidence.level.get(), 4);
        // no well-formed sample for the other dimensions
        assert_eq!(agg["age"].vote.voted_tag, "Unknown(NA)");
        assert_eq!(agg["age"].vote.winning_score, 0);
        assert_eq!(agg["age"].confidence.level.get(), 1);
    }

    #[test]
    fn uncalibrated_level_rounds_half_up() {
        assert_eq!(uncalibrated_level(35, 10).get(), 4);
        assert_eq!(uncalibrated_level(34, 10).get(), 3);
        assert_eq!(uncalibrated_level(50, 10).get(), 5);
        assert_eq!(uncalibrated_level(3, 10).get(), 1);
    }

    #[test]
    fn evidence_from_most_confident_winner() {
        let t = Taxonomy::builtin();
        let s = gender_samples(&[("Male", 3), ("Female", 4), ("Male", 5)]);
        let agg = aggregate_record(&s, &t, Strategy::ConfidenceWeighted, None).unwrap();
        assert_eq!(agg["gender"].vote.voted_tag, "Male");
        assert_eq!(agg["gender"].evidence, "ev2-5");
        let s = gender_samples(&[("Male", 4), ("Male", 4)]);
        let agg = aggregate_record(&s, &t, Strategy::ConfidenceWeighted, None).unwrap();
        assert_eq!(agg["gender"].evidence, "ev0-4");
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("confidence-weighted".parse::<Strategy>().unwrap(), Strategy::ConfidenceWeighted);
        assert_eq!("majority".parse::<Strategy>().unwrap(), Strategy::Majority);
        assert_eq!("single_sample".parse::<Strategy>().unwrap(), Strategy::SingleSample);
        assert!("mean".parse::<Strategy>().is_err());
    }
}
