//! User records, gold profiles, corpus files and the synthetic corpus generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint;
use crate::taxonomy::{Taxonomy, TaxonomyDimension};

const KEYPHRASE_FIXTURE: &str = include_str!("../fixtures/keyphrases.json");

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: duplicate record_id `{record_id}`")]
    DuplicateRecordId { line: usize, record_id: String },
    #[error("line {line}: gold tag `{tag}` is not valid for dimension `{dimension}`")]
    InvalidGoldTag {
        line: usize,
        dimension: String,
        tag: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dimension id → tag. Dimensions that are absent count as abstentions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile {
    pub assignments: BTreeMap<String, String>,
}

impl Profile {
    pub fn get(&self, dimension: &str) -> Option<&str> {
        self.assignments.get(dimension).map(String::as_str)
    }

    /// Tag for `dim`, with missing dimensions reported as its abstention tag.
    pub fn tag_or_na<'a>(&'a self, dim: &'a TaxonomyDimension) -> &'a str {
        self.get(&dim.id).unwrap_or(&dim.na_tag)
    }

    pub fn insert(&mut self, dimension: impl Into<String>, tag: impl Into<String>) {
        self.assignments.insert(dimension.into(), tag.into());
    }
}

impl FromIterator<(String, String)> for Profile {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            assignments: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub record_id: String,
    pub behavioral_cues: Vec<String>,
    #[serde(default)]
    pub demographic_cues: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Profile>,
    /// Synthetic corpora only: per dimension, whether the cues actually carry
    /// evidence for the gold tag. Read by the mock backend and by tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_evidence: Option<BTreeMap<String, bool>>,
}

impl UserRecord {
    pub fn new(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            behavioral_cues: Vec::new(),
            demographic_cues: BTreeMap::new(),
            gold: None,
            oracle_evidence: None,
        }
    }

    pub fn gold_tag(&self, dimension: &str) -> Option<&str> {
        self.gold.as_ref().and_then(|g| g.get(dimension))
    }

    /// Whether the cues carry evidence for `dimension`. Records without the
    /// oracle flag are assumed informative.
    pub fn evidence_present(&self, dimension: &str) -> bool {
        self.oracle_evidence
            .as_ref()
            .and_then(|m| m.get(dimension).copied())
            .unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<UserRecord>,
    pub taxonomy_ref: String,
}

impl Corpus {
    pub fn new(records: Vec<UserRecord>, taxonomy: &Taxonomy) -> Self {
        Self {
            records,
            taxonomy_ref: taxonomy.fingerprint(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&UserRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn index(&self) -> HashMap<&str, &UserRecord> {
        self.records
            .iter()
            .map(|r| (r.record_id.as_str(), r))
            .collect()
    }
}

/// Parses corpus text, one JSON record per line. Blank lines are skipped.
pub fn parse_corpus(text: &str, taxonomy: &Taxonomy) -> Result<Corpus, RecordsError> {
    let lines = text.lines().map(|l| Ok(l.to_string()));
    collect_records(lines, taxonomy)
}

pub fn read_corpus(path: &Path, taxonomy: &Taxonomy) -> Result<Corpus, RecordsError> {
    let reader = BufReader::new(File::open(path)?);
    collect_records(reader.lines(), taxonomy)
}

fn collect_records<I>(lines: I, taxonomy: &Taxonomy) -> Result<Corpus, RecordsError>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(&line, line_no, taxonomy)?;
        if !seen.insert(record.record_id.clone()) {
            return Err(RecordsError::DuplicateRecordId {
                line: line_no,
                record_id: record.record_id,
            });
        }
        records.push(record);
    }
    Ok(Corpus::new(records, taxonomy))
}

fn parse_record_line(
    line: &str,
    line_no: usize,
    taxonomy: &Taxonomy,
) -> Result<UserRecord, RecordsError> {
    let mut record: UserRecord =
        serde_json::from_str(line).map_err(|e| RecordsError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
    if record.record_id.is_empty() {
        return Err(RecordsError::ParseError {
            line: line_no,
            message: "record_id must be non-empty".into(),
        });
    }
    if let Some(gold) = record.gold.as_mut() {
        for (dimension, tag) in gold.assignments.iter_mut() {
            let canonical = taxonomy
                .dimension(dimension)
                .and_then(|d| d.canonical_tag(tag))
                .ok_or_else(|| RecordsError::InvalidGoldTag {
                    line: line_no,
                    dimension: dimension.clone(),
                    tag: tag.clone(),
                })?;
            *tag = canonical.to_string();
        }
    }
    Ok(record)
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for record in &corpus.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), RecordsError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in &corpus.records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct KeyphrasePools {
    #[allow(dead_code)]
    version: u32,
    filler: Vec<String>,
    tags: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

fn pools() -> KeyphrasePools {
    serde_json::from_str(KEYPHRASE_FIXTURE).expect("keyphrase fixture is valid")
}

const REGIONS: &[&str] = &[
    "north", "south", "east", "west", "central", "coastal", "mountain", "overseas",
];

/// Deterministic synthetic corpus.
///
/// Each record gets a gold tag per dimension drawn uniformly from the
/// non-abstention tags. With probability `noise` a dimension's cues are
/// replaced by filler (uninformative) or by cues of a different tag
/// (contradictory); either way its `oracle_evidence` flag is false.
pub fn generate_synthetic_corpus(taxonomy: &Taxonomy, n: usize, noise: f64, seed: u64) -> Corpus {
    let noise = noise.clamp(0.0, 1.0);
    let pools = pools();
    let mut rng = ChaCha8Rng::seed_from_u64(fingerprint::derive_seed(seed, "synthetic-corpus"));
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut record = UserRecord::new(format!("u{i:06}"));
        let mut gold = Profile::default();
        let mut evidence = BTreeMap::new();
        let mut cues = Vec::new();
        for dim in taxonomy.dimensions() {
            let informative: Vec<&str> = dim.informative_tags().collect();
            let tag = informative[rng.gen_range(0..informative.len())];
            gold.insert(dim.id.clone(), tag);
            let noisy = rng.gen_bool(noise);
            evidence.insert(dim.id.clone(), !noisy);
            let cue_tag = if !noisy {
                Some(tag)
            } else if informative.len() > 1 && rng.gen_bool(0.5) {
                let others: Vec<&str> = informative.iter().copied().filter(|t| *t != tag).collect();
                Some(others[rng.gen_range(0..others.len())])
            } else {
                None
            };
            match cue_tag {
                Some(t) => {
                    let phrases = tag_pool(&pools, dim, t);
                    let k = rng.gen_range(1..=2).min(phrases.len());
                    cues.extend(phrases.choose_multiple(&mut rng, k).cloned());
                    if (dim.id == "gender" || dim.id == "age") && rng.gen_bool(0.6) {
                        record.demographic_cues.insert(dim.id.clone(), t.to_string());
                    }
                }
                None => {
                    cues.push(pools.filler.choose(&mut rng).expect("filler pool").clone());
                }
            }
        }
        if rng.gen_bool(0.7) {
            record.demographic_cues.insert(
                "region".into(),
                REGIONS.choose(&mut rng).expect("regions").to_string(),
            );
        }
        if rng.gen_bool(0.4) {
            record.demographic_cues.insert(
                "signature".into(),
                pools.filler.choose(&mut rng).expect("filler pool").clone(),
            );
        }
        let mut seen = HashSet::new();
        cues.retain(|c| seen.insert(c.clone()));
        cues.shuffle(&mut rng);
        record.behavioral_cues = cues;
        record.gold = Some(gold);
        record.oracle_evidence = Some(evidence);
        records.push(record);
    }
    Corpus::new(records, taxonomy)
}

fn tag_pool(pools: &KeyphrasePools, dim: &TaxonomyDimension, tag: &str) -> Vec<String> {
    match pools.tags.get(&dim.id).and_then(|m| m.get(tag)) {
        Some(list) if !list.is_empty() => list.clone(),
        _ => vec![format!("{} content", tag.to_lowercase())],
    }
}
