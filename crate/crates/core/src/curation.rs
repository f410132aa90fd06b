//! SFT file construction and difficulty-based corpus reshaping.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate_record, AggregatedDimension, AggregationError, CalibrationTables, Strategy};
use crate::annotation::{render_annotation, AnnotationError, AnnotationSet, ConfidenceLevel, DimensionAnnotation};
use crate::fingerprint;
use crate::orchestrator::prompt::{render_prompt, PromptTemplate};
use crate::records::Corpus;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("no aggregated result for record {0}")]
    MissingAggregation(String),
    #[error("nothing to filter")]
    EmptyInput,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// Per-dimension aggregation of one record.
pub type AggregatedRecord = BTreeMap<String, AggregatedDimension>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub record_id: String,
    pub prompt: String,
    pub target: String,
}

#[derive(Serialize)]
struct SftLine<'a> {
    prompt: &'a str,
    target: &'a str,
}

/// The voted annotation of one record, with calibrated levels in place of
/// raw confidences.
pub fn voted_annotation(
    record_id: &str,
    aggregated: &AggregatedRecord,
    taxonomy: &Taxonomy,
) -> Result<AnnotationSet, CurationError> {
    let annotations = taxonomy.dimensions().iter().map(|dim| match aggregated.get(&dim.id) {
        Some(a) => DimensionAnnotation::new(
            dim.id.clone(),
            a.vote.voted_tag.clone(),
            a.confidence.level,
            a.evidence.clone(),
        ),
        None => DimensionAnnotation::new(dim.id.clone(), dim.na_tag.clone(), ConfidenceLevel::MIN, ""),
    });
    Ok(AnnotationSet::new(record_id, 0, annotations, taxonomy)?)
}

pub fn build_sft(
    corpus: &Corpus,
    results: &BTreeMap<String, AggregatedRecord>,
    taxonomy: &Taxonomy,
    template: &PromptTemplate,
) -> Result<Vec<SftSample>, CurationError> {
    corpus
        .records
        .iter()
        .map(|record| {
            let aggregated = results
                .get(&record.record_id)
                .ok_or_else(|| CurationError::MissingAggregation(record.record_id.clone()))?;
            let set = voted_annotation(&record.record_id, aggregated, taxonomy)?;
            Ok(SftSample {
                record_id: record.record_id.clone(),
                prompt: render_prompt(template, record, taxonomy),
                target: render_annotation(&set, taxonomy),
            })
        })
        .collect()
}

/// JSONL with one `{prompt, target}` object per line.
pub fn sft_jsonl(samples: &[SftSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let line = SftLine {
            prompt: &s.prompt,
            target: &s.target,
        };
        out.push_str(&serde_json::to_string(&line).expect("strings serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub record_id: String,
    pub level: ConfidenceLevel,
}

/// Mean of the calibrated levels, rounded half up.
pub fn difficulty_of(record_id: &str, aggregated: &AggregatedRecord) -> DifficultyProfile {
    let n = aggregated.len() as u64;
    let level = if n == 0 {
        ConfidenceLevel::MIN
    } else {
        let sum: u64 = aggregated.values().map(|a| u64::from(a.confidence.level.get())).sum();
        ConfidenceLevel::saturating(((2 * sum + n) / (2 * n)) as i64)
    };
    DifficultyProfile {
        record_id: record_id.to_string(),
        level,
    }
}

pub fn record_difficulty(
    samples: &[AnnotationSet],
    taxonomy: &Taxonomy,
    tables: Option<&CalibrationTables>,
) -> Result<DifficultyProfile, CurationError> {
    let aggregated = aggregate_record(samples, taxonomy, Strategy::ConfidenceWeighted, tables)?;
    Ok(difficulty_of(&samples[0].record_id, &aggregated))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Original,
    Uniform,
    Vee,
    Wedge,
    MShape,
}

impl ShapeName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Uniform => "uniform",
            Self::Vee => "vee",
            Self::Wedge => "wedge",
            Self::MShape => "m_shape",
        }
    }

    pub fn default_mass(self) -> [f64; 5] {
        match self {
            Self::Original | Self::Uniform => [0.2; 5],
            Self::Vee => [0.3, 0.15, 0.1, 0.15, 0.3],
            Self::Wedge => [0.1, 0.2, 0.4, 0.2, 0.1],
            Self::MShape => [0.1, 0.3, 0.2, 0.3, 0.1],
        }
    }
}

impl fmt::Display for ShapeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeName {
    type Err = CurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "original" => Ok(Self::Original),
            "uniform" => Ok(Self::Uniform),
            "vee" | "v" => Ok(Self::Vee),
            "wedge" => Ok(Self::Wedge),
            "m_shape" | "m" => Ok(Self::MShape),
            other => Err(CurationError::InvalidShape(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub name: ShapeName,
    /// Fractions for difficulty levels 1..5.
    pub target_mass: [f64; 5],
}

impl ShapeSpec {
    pub fn named(name: ShapeName) -> Self {
        Self {
            name,
            target_mass: name.default_mass(),
        }
    }

    pub fn new(name: ShapeName, target_mass: [f64; 5]) -> Result<Self, CurationError> {
        let spec = Self { name, target_mass };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        if self.name == ShapeName::Original {
            return Ok(());
        }
        if self.target_mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(CurationError::InvalidShape("masses must be non-negative".into()));
        }
        let sum: f64 = self.target_mass.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CurationError::InvalidShape(format!("masses sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self::named(ShapeName::Original)
    }
}

fn bin_of(level: ConfidenceLevel) -> usize {
    usize::from(level.get()) - 1
}

/// Per-bin keep counts under water-filling: the scale is set by the bin that
/// runs out first, every other bin keeps its proportional share.
pub fn water_fill(counts: [usize; 5], mass: [f64; 5]) -> (f64, [usize; 5]) {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return (0.0, [0; 5]);
    }
    let binding = (0..5)
        .filter(|&b| mass[b] > 0.0)
        .min_by(|&a, &b| {
            let ra = counts[a] as f64 / mass[a];
            let rb = counts[b] as f64 / mass[b];
            ra.partial_cmp(&rb).expect("finite ratios").then(a.cmp(&b))
        });
    let Some(binding) = binding else {
        return (0.0, [0; 5]);
    };
    let lambda = counts[binding] as f64 / (mass[binding] * total as f64);
    let mut keep = [0usize; 5];
    for b in 0..5 {
        keep[b] = if b == binding {
            counts[b]
        } else {
            let exact = mass[b] * counts[binding] as f64 / mass[binding];
            ((exact + 1e-9).floor() as usize).min(counts[b])
        };
    }
    (lambda, keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub level: u8,
    pub before: usize,
    pub after: usize,
    pub target_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub shape: ShapeName,
    pub lambda: f64,
    pub seed: u64,
    pub total_before: usize,
    pub total_after: usize,
    pub bins: Vec<BinReport>,
}

impl FilterReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "shape: {}  lambda: {:.4}  seed: {}", self.shape, self.lambda, self.seed);
        let _ = writeln!(out, "{:<6} {:>8} {:>8} {:>8}", "level", "before", "after", "mass");
        for b in &self.bins {
            let _ = writeln!(out, "{:<6} {:>8} {:>8} {:>8.3}", b.level, b.before, b.after, b.target_mass);
        }
        let _ = writeln!(out, "{:<6} {:>8} {:>8}", "total", self.total_before, self.total_after);
        out
    }
}

/// Selected record ids (sorted) and the per-bin report.
pub fn filter_with_report(
    profiles: &[DifficultyProfile],
    spec: &ShapeSpec,
    seed: u64,
) -> Result<(Vec<String>, FilterReport), CurationError> {
    spec.validate()?;
    if profiles.is_empty() {
        return Err(CurationError::EmptyInput);
    }
    let mut bins: [Vec<&str>; 5] = Default::default();
    for p in profiles {
        bins[bin_of(p.level)].push(p.record_id.as_str());
    }
    for bin in &mut bins {
        bin.sort_unstable();
        bin.dedup();
    }
    let counts = [0, 1, 2, 3, 4].map(|b| bins[b].len());

    let (lambda, keep) = if spec.name == ShapeName::Original {
        (1.0, counts)
    } else {
        water_fill(counts, spec.target_mass)
    };
    if keep.iter().sum::<usize>() == 0 {
        log::warn!("shape {} keeps no records: a weighted bin is empty", spec.name);
    }

    let mut selected = Vec::new();
    for (b, ids) in bins.iter().enumerate() {
        if keep[b] == ids.len() {
            selected.extend(ids.iter().map(|s| s.to_string()));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fingerprint::derive_seed(seed, &format!("filter:bin{}", b + 1)));
        for i in rand::seq::index::sample(&mut rng, ids.len(), keep[b]) {
            selected.push(ids[i].to_string());
        }
    }
    selected.sort_unstable();

    let mass = if spec.name == ShapeName::Original {
        let total = profiles.len() as f64;
        counts.map(|c| c as f64 / total)
    } else {
        spec.target_mass
    };
    let report = FilterReport {
        shape: spec.name,
        lambda,
        seed,
        total_before: counts.iter().sum(),
        total_after: selected.len(),
        bins: (0..5)
            .map(|b| BinReport {
                level: b as u8 + 1,
                before: counts[b],
                after: keep[b],
                target_mass: mass[b],
            })
            .collect(),
    };
    Ok((selected, report))
}

pub fn filter_to_shape(
    profiles: &[DifficultyProfile],
    spec: &ShapeSpec,
    seed: u64,
) -> Result<Vec<String>, CurationError> {
    filter_with_report(profiles, spec, seed).map(|(ids, _)| ids)
}
