//! Per-dimension (tag, confidence, evidence) annotations and their tagged text format.
//!
//! One dimension renders as
//!
//! ```text
//! <box><dim>gender</dim><tag>Male</tag><score>4</score><evidence>razor review</evidence></box>
//! ```
//!
//! Element contents escape `&`, `<` and `>` as XML entities. The parser is
//! whitespace tolerant between elements, order tolerant across blocks, keeps
//! the first block per dimension, and never fails: malformed output is
//! reported per dimension through [`RawDimensionOutput::well_formed`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{Taxonomy, TaxonomyDimension};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown confidence word `{0}`")]
    UnknownConfidenceWord(String),
    #[error("confidence level {0} outside 1..=5")]
    LevelOutOfRange(i64),
    #[error("dimension `{0}` is not in the taxonomy")]
    UnknownDimension(String),
    #[error("tag `{tag}` is not valid for dimension `{dimension}`")]
    InvalidTag { dimension: String, tag: String },
    #[error("dimension `{0}` has an informative tag but empty evidence")]
    MissingEvidence(String),
    #[error("dimension key `{key}` does not match annotation dimension `{dimension}`")]
    KeyMismatch { key: String, dimension: String },
}

/// Verbal confidence scale, lowest first.
pub const VERBAL_SCALE: [&str; 5] = ["very low", "low", "medium", "high", "very high"];

/// Confidence on the closed 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct ConfidenceLevel(u8);

impl ConfidenceLevel {
    pub const MIN: ConfidenceLevel = ConfidenceLevel(1);
    pub const MAX: ConfidenceLevel = ConfidenceLevel(5);

    pub fn new(level: i64) -> Result<Self, AnnotationError> {
        if (1..=5).contains(&level) {
            Ok(Self(level as u8))
        } else {
            Err(AnnotationError::LevelOutOfRange(level))
        }
    }

    /// Clamps into 1..=5.
    pub fn saturating(level: i64) -> Self {
        Self(level.clamp(1, 5) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn verbal(self) -> &'static str {
        VERBAL_SCALE[usize::from(self.0) - 1]
    }

    pub fn all() -> impl Iterator<Item = ConfidenceLevel> {
        (1..=5).map(ConfidenceLevel)
    }
}

impl TryFrom<i64> for ConfidenceLevel {
    type Error = AnnotationError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ConfidenceLevel> for u8 {
    fn from(level: ConfidenceLevel) -> u8 {
        level.0
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maps a verbal label ("very low" .. "very high", case-insensitive) or an
/// integer string "1".."5" to a level.
pub fn verbal_to_level(word: &str) -> Result<ConfidenceLevel, AnnotationError> {
    let normalized = word.split_whitespace().collect::<Vec<_>>().join(" ");
    if let Ok(n) = normalized.parse::<i64>() {
        return ConfidenceLevel::new(n)
            .map_err(|_| AnnotationError::UnknownConfidenceWord(word.to_string()));
    }
    let lower = normalized.to_lowercase();
    VERBAL_SCALE
        .iter()
        .position(|w| *w == lower)
        .map(|i| ConfidenceLevel(i as u8 + 1))
        .ok_or_else(|| AnnotationError::UnknownConfidenceWord(word.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAnnotation {
    pub dimension_id: String,
    pub tag: String,
    pub confidence: ConfidenceLevel,
    pub evidence: String,
}

impl DimensionAnnotation {
    pub fn new(
        dimension_id: impl Into<String>,
        tag: impl Into<String>,
        confidence: ConfidenceLevel,
        evidence: impl Into<String>,
    ) -> Self {
        Self {
            dimension_id: dimension_id.into(),
            tag: tag.into(),
            confidence,
            evidence: evidence.into(),
        }
    }

    pub fn validate(&self, dim: &TaxonomyDimension) -> Result<(), AnnotationError> {
        if !dim.validate_tag(&self.tag) {
            return Err(AnnotationError::InvalidTag {
                dimension: dim.id.clone(),
                tag: self.tag.clone(),
            });
        }
        if self.evidence.is_empty() && !dim.is_na(&self.tag) {
            return Err(AnnotationError::MissingEvidence(dim.id.clone()));
        }
        Ok(())
    }
}

/// One model sample for one record.
///
/// A set built from parsed model output may omit dimensions whose block was
/// malformed; [`AnnotationSet::is_complete`] reports full coverage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub record_id: String,
    pub sample_index: usize,
    pub annotations: BTreeMap<String, DimensionAnnotation>,
}

impl AnnotationSet {
    /// Builds a validated, complete set.
    pub fn new(
        record_id: impl Into<String>,
        sample_index: usize,
        annotations: impl IntoIterator<Item = DimensionAnnotation>,
        taxonomy: &Taxonomy,
    ) -> Result<Self, AnnotationError> {
        let set = Self::partial(record_id, sample_index, annotations, taxonomy)?;
        for dim in taxonomy.dimensions() {
            if !set.annotations.contains_key(&dim.id) {
                return Err(AnnotationError::UnknownDimension(dim.id.clone()));
            }
        }
        Ok(set)
    }

    /// Builds a validated set that may leave dimensions out.
    pub fn partial(
        record_id: impl Into<String>,
        sample_index: usize,
        annotations: impl IntoIterator<Item = DimensionAnnotation>,
        taxonomy: &Taxonomy,
    ) -> Result<Self, AnnotationError> {
        let mut map = BTreeMap::new();
        for mut ann in annotations {
            let dim = taxonomy
                .dimension(&ann.dimension_id)
                .ok_or_else(|| AnnotationError::UnknownDimension(ann.dimension_id.clone()))?;
            ann.validate(dim)?;
            ann.tag = ann.tag.trim().to_string();
            map.insert(dim.id.clone(), ann);
        }
        Ok(Self {
            record_id: record_id.into(),
            sample_index,
            annotations: map,
        })
    }

    pub fn get(&self, dimension: &str) -> Option<&DimensionAnnotation> {
        self.annotations.get(dimension)
    }

    pub fn is_complete(&self, taxonomy: &Taxonomy) -> bool {
        taxonomy.ids().all(|id| self.annotations.contains_key(id))
    }
}

/// What the parser extracted for one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDimensionOutput {
    pub dimension_id: String,
    pub raw_tag: String,
    pub raw_score: String,
    pub raw_evidence: String,
    pub well_formed: bool,
    /// The validated annotation; present exactly when `well_formed`.
    #[serde(skip)]
    pub annotation: Option<DimensionAnnotation>,
}

impl RawDimensionOutput {
    fn absent(dimension_id: &str) -> Self {
        Self {
            dimension_id: dimension_id.to_string(),
            raw_tag: String::new(),
            raw_score: String::new(),
            raw_evidence: String::new(),
            well_formed: false,
            annotation: None,
        }
    }
}

/// Parser result: one entry per taxonomy dimension, in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub outputs: Vec<RawDimensionOutput>,
}

impl ParseOutcome {
    pub fn is_complete(&self) -> bool {
        self.outputs.iter().all(|o| o.well_formed)
    }

    pub fn output(&self, dimension: &str) -> Option<&RawDimensionOutput> {
        self.outputs.iter().find(|o| o.dimension_id == dimension)
    }

    pub fn annotation(&self, dimension: &str) -> Option<&DimensionAnnotation> {
        self.output(dimension).and_then(|o| o.annotation.as_ref())
    }

    pub fn well_formed(&self, dimension: &str) -> bool {
        self.output(dimension).is_some_and(|o| o.well_formed)
    }

    pub fn malformed_dimensions(&self) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| !o.well_formed)
            .map(|o| o.dimension_id.clone())
            .collect()
    }

    /// A complete set, or the per-dimension outputs when any dimension is malformed.
    pub fn into_result(
        self,
        record_id: impl Into<String>,
        sample_index: usize,
    ) -> Result<AnnotationSet, Vec<RawDimensionOutput>> {
        if !self.is_complete() {
            return Err(self.outputs);
        }
        Ok(self.into_partial(record_id, sample_index))
    }

    /// The well-formed dimensions only.
    pub fn into_partial(self, record_id: impl Into<String>, sample_index: usize) -> AnnotationSet {
        let annotations = self
            .outputs
            .into_iter()
            .filter_map(|o| o.annotation)
            .map(|a| (a.dimension_id.clone(), a))
            .collect();
        AnnotationSet {
            record_id: record_id.into(),
            sample_index,
            annotations,
        }
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let (replacement, len) = if rest.starts_with("&amp;") {
            ('&', 5)
        } else if rest.starts_with("&lt;") {
            ('<', 4)
        } else if rest.starts_with("&gt;") {
            ('>', 4)
        } else {
            ('&', 1)
        };
        out.push(replacement);
        rest = &rest[len..];
    }
    out.push_str(rest);
    out
}

/// Renders one block per annotated dimension, in taxonomy order, newline separated.
pub fn render_annotation(set: &AnnotationSet, taxonomy: &Taxonomy) -> String {
    let mut out = String::new();
    for dim in taxonomy.dimensions() {
        let Some(ann) = set.annotations.get(&dim.id) else {
            continue;
        };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&render_block(&dim.id, &ann.tag, &ann.confidence.to_string(), &ann.evidence));
    }
    out
}

pub(crate) fn render_block(dimension: &str, tag: &str, score: &str, evidence: &str) -> String {
    format!(
        "<box><dim>{}</dim><tag>{}</tag><score>{}</score><evidence>{}</evidence></box>",
        escape(dimension),
        escape(tag),
        escape(score),
        escape(evidence)
    )
}

fn element<'a>(block: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = block.find(&open)? + open.len();
    let len = block[start..].find(&close)?;
    Some(&block[start..start + len])
}

fn blocks(text: &str) -> Vec<&str> {
    const OPEN: &str = "<box>";
    const CLOSE: &str = "</box>";
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find(OPEN) {
        let body = &rest[pos + OPEN.len()..];
        match body.find(CLOSE) {
            Some(end) => {
                out.push(&body[..end]);
                rest = &body[end + CLOSE.len()..];
            }
            None => {
                out.push(body);
                break;
            }
        }
    }
    out
}

/// Parses model output against the taxonomy; total over all inputs.
pub fn parse_annotation(text: &str, taxonomy: &Taxonomy) -> ParseOutcome {
    let mut found: BTreeMap<&str, RawDimensionOutput> = BTreeMap::new();
    for block in blocks(text) {
        let Some(raw_dim) = element(block, "dim") else {
            continue;
        };
        let dim_id = unescape(raw_dim);
        let Some(dim) = taxonomy.dimension(&dim_id) else {
            continue;
        };
        if found.contains_key(dim.id.as_str()) {
            continue;
        }
        found.insert(dim.id.as_str(), parse_block(block, dim));
    }
    let outputs = taxonomy
        .dimensions()
        .iter()
        .map(|d| {
            found
                .remove(d.id.as_str())
                .unwrap_or_else(|| RawDimensionOutput::absent(&d.id))
        })
        .collect();
    ParseOutcome { outputs }
}

/// Lossy UTF-8 entry point for raw bytes.
pub fn parse_annotation_bytes(bytes: &[u8], taxonomy: &Taxonomy) -> ParseOutcome {
    parse_annotation(&String::from_utf8_lossy(bytes), taxonomy)
}

fn parse_block(block: &str, dim: &TaxonomyDimension) -> RawDimensionOutput {
    let tag = element(block, "tag").map(unescape);
    let score = element(block, "score").map(unescape);
    let evidence = element(block, "evidence").map(unescape);
    let annotation = match (&tag, &score, &evidence) {
        (Some(tag), Some(score), Some(evidence)) => {
            match (dim.canonical_tag(tag), verbal_to_level(score)) {
                (Some(canonical), Ok(level)) => Some(DimensionAnnotation::new(
                    dim.id.clone(),
                    canonical,
                    level,
                    evidence.clone(),
                )),
                _ => None,
            }
        }
        _ => None,
    };
    RawDimensionOutput {
        dimension_id: dim.id.clone(),
        raw_tag: tag.unwrap_or_default(),
        raw_score: score.unwrap_or_default(),
        raw_evidence: evidence.unwrap_or_default(),
        well_formed: annotation.is_some(),
        annotation,
    }
}

/// Persisted form of one parsed sample (one line of an annotation file).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub record_id: String,
    pub sample_index: usize,
    pub annotations: BTreeMap<String, WireAnnotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAnnotation {
    pub tag: String,
    pub score: ConfidenceLevel,
    pub evidence: String,
}

impl AnnotationLine {
    pub fn from_outcome(record_id: &str, sample_index: usize, outcome: &ParseOutcome) -> Self {
        let annotations = outcome
            .outputs
            .iter()
            .filter_map(|o| o.annotation.as_ref())
            .map(|a| {
                (
                    a.dimension_id.clone(),
                    WireAnnotation {
                        tag: a.tag.clone(),
                        score: a.confidence,
                        evidence: a.evidence.clone(),
                    },
                )
            })
            .collect();
        Self {
            record_id: record_id.to_string(),
            sample_index,
            annotations,
            malformed: outcome.malformed_dimensions(),
        }
    }

    /// Revalidates the line against `taxonomy`. Wire evidence is opaque, so the
    /// non-empty-evidence rule is not applied here.
    pub fn to_set(&self, taxonomy: &Taxonomy) -> Result<AnnotationSet, AnnotationError> {
        let mut annotations = BTreeMap::new();
        for (key, wire) in &self.annotations {
            let dim = taxonomy
                .dimension(key)
                .ok_or_else(|| AnnotationError::UnknownDimension(key.clone()))?;
            let tag = dim
                .canonical_tag(&wire.tag)
                .ok_or_else(|| AnnotationError::InvalidTag {
                    dimension: key.clone(),
                    tag: wire.tag.clone(),
                })?;
            annotations.insert(
                dim.id.clone(),
                DimensionAnnotation::new(dim.id.clone(), tag, wire.score, wire.evidence.clone()),
            );
        }
        Ok(AnnotationSet {
            record_id: self.record_id.clone(),
            sample_index: self.sample_index,
            annotations,
        })
    }
}
