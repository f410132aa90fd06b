use std::path::{Path, PathBuf};

use labelfree::aggregation::Strategy;
use labelfree::curation::{ShapeName, ShapeSpec};
use labelfree::fingerprint;
use labelfree::orchestrator::{BackendKind, BackendSpec, SamplingConfig};
use labelfree::reward::RewardMode;
use labelfree::{ConfidenceLevel, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::error::StageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub work_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub sft: Option<PathBuf>,
    pub filtered: Option<PathBuf>,
    pub filter_report: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub requests: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("run"),
            corpus: None,
            annotations: None,
            raw: None,
            votes: None,
            tables: None,
            sft: None,
            filtered: None,
            filter_report: None,
            reference: None,
            requests: None,
            responses: None,
            report: None,
            sweep: None,
            plot: None,
        }
    }
}

macro_rules! path_getters {
    ($($name:ident => $file:literal),* $(,)?) => {
        impl Paths {
            $(
                pub fn $name(&self) -> PathBuf {
                    self.$name.clone().unwrap_or_else(|| self.work_dir.join($file))
                }
            )*
        }
    };
}

path_getters! {
    corpus => "corpus.jsonl",
    annotations => "annotations.jsonl",
    raw => "raw_samples.jsonl",
    votes => "votes.jsonl",
    tables => "calibration.json",
    sft => "sft.jsonl",
    filtered => "filtered_corpus.jsonl",
    filter_report => "filter_report.json",
    reference => "reference.jsonl",
    requests => "reward_requests.jsonl",
    responses => "reward_responses.jsonl",
    report => "report.json",
    sweep => "sweep.csv",
    plot => "sweep.svg",
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub records: usize,
    pub noise: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            records: 1000,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub name: ShapeName,
    /// Overrides the named shape's default masses.
    pub target_mass: Option<[f64; 5]>,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            name: ShapeName::Original,
            target_mass: None,
        }
    }
}

impl ShapeConfig {
    pub fn spec(&self) -> Result<ShapeSpec, StageError> {
        let spec = match self.target_mass {
            Some(mass) => ShapeSpec::new(self.name, mass),
            None => Ok(ShapeSpec::named(self.name)),
        };
        spec.map_err(|e| StageError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every stage seed.
    pub seed: u64,
    pub taxonomy: Option<PathBuf>,
    pub strategy: Strategy,
    pub tau: ConfidenceLevel,
    pub mode: RewardMode,
    pub paths: Paths,
    pub gen: GenConfig,
    pub backend: BackendSpec,
    pub sampling: SamplingConfig,
    pub shape: ShapeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            taxonomy: None,
            strategy: Strategy::ConfidenceWeighted,
            tau: ConfidenceLevel::MIN,
            mode: RewardMode::Frozen,
            paths: Paths::default(),
            gen: GenConfig::default(),
            backend: BackendSpec::default(),
            sampling: SamplingConfig::default(),
            shape: ShapeConfig::default(),
        }
    }
}

/// Command-line values that replace configured ones.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub m: Option<usize>,
    pub tau: Option<i64>,
    pub strategy: Option<String>,
    pub shape: Option<String>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub work_dir: Option<PathBuf>,
}

fn parse_backend(s: &str) -> Result<BackendKind, StageError> {
    match s.trim().replace('-', "_").as_str() {
        "mock" => Ok(BackendKind::Mock),
        "http_chat" | "http" => Ok(BackendKind::HttpChat),
        other => Err(StageError::Config(format!("unknown backend {other:?}"))),
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, StageError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| StageError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| StageError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), StageError> {
        if let Some(m) = o.m {
            self.sampling.m_samples = m;
        }
        if let Some(tau) = o.tau {
            self.tau = ConfidenceLevel::new(tau).map_err(|e| StageError::Config(e.to_string()))?;
        }
        if let Some(s) = &o.strategy {
            self.strategy = s.parse().map_err(|e: labelfree::aggregation::AggregationError| {
                StageError::Config(e.to_string())
            })?;
        }
        if let Some(s) = &o.shape {
            self.shape.name = s.parse().map_err(|e: labelfree::curation::CurationError| {
                StageError::Config(e.to_string())
            })?;
            self.shape.target_mass = None;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(b) = &o.backend {
            self.backend.kind = parse_backend(b)?;
        }
        if let Some(dir) = &o.work_dir {
            self.paths.work_dir = dir.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), StageError> {
        if self.sampling.m_samples == 0 {
            return Err(StageError::Config("sampling.m_samples must be at least 1".into()));
        }
        if self.sampling.max_parallel == 0 {
            return Err(StageError::Config("sampling.max_parallel must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gen.noise) {
            return Err(StageError::Config("gen.noise must lie in [0, 1]".into()));
        }
        self.shape.spec()?;
        Ok(())
    }

    /// Hash of everything but the paths, so relocating a run keeps it.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("paths");
        }
        fingerprint::of(&value)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        fingerprint::derive_seed(self.seed, stage)
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, StageError> {
        match &self.taxonomy {
            Some(path) => Taxonomy::load(path).map_err(|e| StageError::Config(e.to_string())),
            None => Ok(Taxonomy::builtin()),
        }
    }
}
