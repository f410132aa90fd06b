use std::collections::{BTreeMap, BTreeSet};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use labelfree::aggregation::{self, CalibrationTables};
use labelfree::annotation::AnnotationLine;
use labelfree::curation::{self, AggregatedRecord, DifficultyProfile};
use labelfree::metrics::{self, LeveledTag, Predictions};
use labelfree::orchestrator::{self, BackendError, JsonlSink, OrchestratorError, PromptTemplate, RawSample};
use labelfree::records::{self, Corpus};
use labelfree::reward::service::{self, RewardRequest, RewardResponse};
use labelfree::reward::{self, ReferenceConfidence, ReferenceSet, RewardMode};
use labelfree::{AnnotationSet, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, read_jsonl, require, Writer};
use crate::config::PipelineConfig;
use crate::error::StageError;

pub struct Context {
    pub config: PipelineConfig,
    pub taxonomy: Taxonomy,
    pub fingerprint: String,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self, StageError> {
        let taxonomy = config.taxonomy()?;
        let fingerprint = config.fingerprint();
        Ok(Self {
            config,
            taxonomy,
            fingerprint,
        })
    }

    fn writer(&self, stage: &'static str) -> Writer<'_> {
        Writer {
            stage,
            config_fingerprint: &self.fingerprint,
        }
    }

    fn corpus(&self) -> Result<Corpus, StageError> {
        let path = self.config.paths.corpus();
        require(&path, "corpus")?;
        records::read_corpus(&path, &self.taxonomy).map_err(|e| StageError::ingest(&path, e))
    }

    fn votes(&self) -> Result<Vec<VoteLine>, StageError> {
        read_jsonl(&self.config.paths.votes(), "votes")
    }

    /// Annotation sets grouped by record id, samples in index order.
    fn annotation_sets(&self) -> Result<BTreeMap<String, Vec<AnnotationSet>>, StageError> {
        let path = self.config.paths.annotations();
        let lines: Vec<AnnotationLine> = read_jsonl(&path, "annotations")?;
        let mut grouped: BTreeMap<String, Vec<AnnotationSet>> = BTreeMap::new();
        for line in &lines {
            let set = line.to_set(&self.taxonomy).map_err(|e| StageError::ingest(&path, e))?;
            grouped.entry(set.record_id.clone()).or_default().push(set);
        }
        for sets in grouped.values_mut() {
            sets.sort_by_key(|s| s.sample_index);
        }
        Ok(grouped)
    }
}

/// One line of the votes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteLine {
    pub record_id: String,
    pub dimensions: AggregatedRecord,
}

#[derive(Serialize, Deserialize)]
struct TablesDoc {
    tables: CalibrationTables,
}

#[derive(Serialize, Deserialize)]
struct SweepDoc {
    reports: Vec<metrics::EvalReport>,
}

fn other(e: impl std::fmt::Display) -> StageError {
    StageError::Other(e.to_string())
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

pub fn gen(ctx: &Context) -> Result<(), StageError> {
    let c = &ctx.config;
    let corpus = records::generate_synthetic_corpus(&ctx.taxonomy, c.gen.records, c.gen.noise, c.stage_seed("gen"));
    ctx.writer("gen").text(&c.paths.corpus(), &records::corpus_to_string(&corpus))
}

pub fn synthesize(ctx: &Context) -> Result<(), StageError> {
    let c = &ctx.config;
    let corpus = ctx.corpus()?;
    let mut sampling = c.sampling.clone();
    sampling.seed = c.stage_seed("synthesize");
    let backend = orchestrator::build_backend(&c.backend, &sampling, &ctx.taxonomy).map_err(|e| match e {
        BackendError::Config(_) | BackendError::MissingCredential(_) => StageError::Config(e.to_string()),
        other => StageError::BackendUnavailable(other.to_string()),
    })?;
    let raw_path = c.paths.raw();
    if let Some(parent) = raw_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let sink = JsonlSink::create(&raw_path)?;
    let results = orchestrator::sample_corpus(
        backend.as_ref(),
        &sampling,
        &PromptTemplate::default(),
        &corpus.records,
        &ctx.taxonomy,
        &sink,
    )
    .map_err(|e| match e {
        OrchestratorError::BackendUnavailable(_) => StageError::BackendUnavailable(e.to_string()),
        OrchestratorError::Sink(e) => other(e),
    })?;
    drop(sink);
    let writer = ctx.writer("synthesize");
    writer.sidecar(&raw_path)?;
    let lines: Vec<AnnotationLine> = results
        .iter()
        .flatten()
        .map(|s| AnnotationLine::from_outcome(&s.record_id, s.sample_index, &s.outcome))
        .collect();
    let malformed: usize = lines.iter().map(|l| l.malformed.len()).sum();
    if malformed > 0 {
        log::warn!("{malformed} malformed dimension outputs across {} samples", lines.len());
    }
    writer.jsonl(&c.paths.annotations(), &lines)
}

pub fn vote(ctx: &Context) -> Result<(), StageError> {
    let grouped = ctx.annotation_sets()?;
    let mut votes = Vec::with_capacity(grouped.len());
    for (record_id, sets) in &grouped {
        let dimensions = aggregation::aggregate_record(sets, &ctx.taxonomy, ctx.config.strategy, None).map_err(other)?;
        votes.push(VoteLine {
            record_id: record_id.clone(),
            dimensions,
        });
    }
    ctx.writer("vote").jsonl(&ctx.config.paths.votes(), &votes)
}

/// Fits the tables and rewrites the votes file with calibrated levels. Raw
/// scores are untouched, so rerunning gives the same result.
pub fn calibrate(ctx: &Context) -> Result<(), StageError> {
    let mut votes = ctx.votes()?;
    let tables = aggregation::fit_tables(votes.iter().map(|v| &v.dimensions), &ctx.taxonomy).map_err(other)?;
    for v in &mut votes {
        aggregation::recalibrate(&mut v.dimensions, &tables);
    }
    let writer = ctx.writer("calibrate");
    writer.json(&ctx.config.paths.tables(), &TablesDoc { tables })?;
    writer.jsonl(&ctx.config.paths.votes(), &votes)
}

fn results_by_record(votes: Vec<VoteLine>) -> BTreeMap<String, AggregatedRecord> {
    votes.into_iter().map(|v| (v.record_id, v.dimensions)).collect()
}

pub fn build_sft(ctx: &Context) -> Result<(), StageError> {
    let corpus = ctx.corpus()?;
    let results = results_by_record(ctx.votes()?);
    let samples = curation::build_sft(&corpus, &results, &ctx.taxonomy, &PromptTemplate::default())
        .map_err(|e| StageError::ingest(&ctx.config.paths.votes(), e))?;
    ctx.writer("build-sft").text(&ctx.config.paths.sft(), &curation::sft_jsonl(&samples))
}

pub fn filter(ctx: &Context) -> Result<(), StageError> {
    let c = &ctx.config;
    let corpus = ctx.corpus()?;
    let profiles: Vec<DifficultyProfile> = ctx
        .votes()?
        .iter()
        .map(|v| curation::difficulty_of(&v.record_id, &v.dimensions))
        .collect();
    let spec = c.shape.spec()?;
    let (ids, report) = curation::filter_with_report(&profiles, &spec, c.stage_seed("filter")).map_err(other)?;
    let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let filtered = Corpus {
        records: corpus
            .records
            .iter()
            .filter(|r| keep.contains(r.record_id.as_str()))
            .cloned()
            .collect(),
        taxonomy_ref: corpus.taxonomy_ref.clone(),
    };
    let writer = ctx.writer("filter");
    writer.text(&c.paths.filtered(), &records::corpus_to_string(&filtered))?;
    writer.json(&c.paths.filter_report(), &report)?;
    writer.text(&sibling(&c.paths.filter_report(), "txt"), &report.render_table())?;
    print!("{}", report.render_table());
    Ok(())
}

pub fn reference(ctx: &Context) -> Result<(), StageError> {
    let tables_path = ctx.config.paths.tables();
    let tables = if tables_path.exists() {
        Some(read_json::<TablesDoc>(&tables_path, "calibration tables")?.tables)
    } else {
        log::warn!(
            "no calibration tables at {}; reference levels are uncalibrated",
            tables_path.display()
        );
        None
    };
    let mut refs = Vec::new();
    for sets in ctx.annotation_sets()?.values() {
        refs.push(reward::build_reference(sets, &ctx.taxonomy, tables.as_ref()).map_err(other)?);
    }
    ctx.writer("reference").jsonl(&ctx.config.paths.reference(), &refs)
}

fn load_references(ctx: &Context) -> Result<ReferenceSet, StageError> {
    let lines: Vec<ReferenceConfidence> = read_jsonl(&ctx.config.paths.reference(), "frozen reference confidences")?;
    Ok(ReferenceSet::new(lines))
}

/// Rollout groups built from the raw-sample store: one request per record,
/// the last attempt per sample index.
fn requests_from_raw(path: &Path, mode: RewardMode) -> Result<Vec<RewardRequest>, StageError> {
    let raw: Vec<RawSample> = read_jsonl(path, "raw samples")?;
    let mut grouped: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    for s in raw {
        grouped.entry(s.record_id).or_default().insert(s.sample_index, s.raw_text);
    }
    Ok(grouped
        .into_iter()
        .map(|(record_id, texts)| RewardRequest {
            record_id,
            rollout_texts: texts.into_values().collect(),
            mode,
        })
        .collect())
}

pub struct RewardArgs {
    pub mode_override: Option<RewardMode>,
    pub from_raw: bool,
    pub listen: Option<String>,
}

pub fn reward(ctx: &Context, args: &RewardArgs) -> Result<(), StageError> {
    let c = &ctx.config;
    if let Some(addr) = &args.listen {
        let refs = if c.mode == RewardMode::Frozen {
            load_references(ctx)?
        } else {
            ReferenceSet::default()
        };
        let listener = TcpListener::bind(addr).map_err(|e| StageError::Config(format!("{addr}: {e}")))?;
        eprintln!("reward service listening on {}", listener.local_addr()?);
        return service::serve(listener, Arc::new(refs), Arc::new(ctx.taxonomy.clone())).map_err(other);
    }

    if c.mode == RewardMode::Frozen && args.mode_override.is_some() {
        require(&c.paths.reference(), "frozen reference confidences")?;
    }
    let mut requests = if args.from_raw {
        requests_from_raw(&c.paths.raw(), c.mode)?
    } else {
        read_jsonl::<RewardRequest>(&c.paths.requests(), "reward requests")?
    };
    if let Some(mode) = args.mode_override {
        for r in &mut requests {
            r.mode = mode;
        }
    }
    let refs = if requests.iter().any(|r| r.mode == RewardMode::Frozen) {
        load_references(ctx)?
    } else {
        ReferenceSet::default()
    };
    let responses: Vec<RewardResponse> = requests
        .iter()
        .map(|r| match service::handle(r, &refs, &ctx.taxonomy) {
            Ok(rewards) => RewardResponse {
                record_id: r.record_id.clone(),
                rewards,
                error: None,
            },
            Err(e) => RewardResponse {
                record_id: r.record_id.clone(),
                rewards: Vec::new(),
                error: Some(e.to_string()),
            },
        })
        .collect();
    let failed = responses.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} reward requests failed", responses.len());
    }
    ctx.writer("reward").jsonl(&c.paths.responses(), &responses)
}

fn predictions(votes: &[VoteLine]) -> Predictions {
    votes
        .iter()
        .map(|v| {
            let profile = v
                .dimensions
                .iter()
                .map(|(dim, a)| (dim.clone(), LeveledTag::new(a.vote.voted_tag.clone(), a.confidence.level)))
                .collect();
            (v.record_id.clone(), profile)
        })
        .collect()
}

/// One prediction set per sample index, each sample's own confidences as levels.
fn per_sample_predictions(grouped: &BTreeMap<String, Vec<AnnotationSet>>) -> Vec<Predictions> {
    let mut sets: BTreeMap<usize, Predictions> = BTreeMap::new();
    for samples in grouped.values() {
        for s in samples {
            let profile = s
                .annotations
                .iter()
                .map(|(dim, a)| (dim.clone(), LeveledTag::new(a.tag.clone(), a.confidence)))
                .collect();
            sets.entry(s.sample_index).or_default().insert(s.record_id.clone(), profile);
        }
    }
    sets.into_values().collect()
}

pub fn evaluate(ctx: &Context, per_sample: bool) -> Result<(), StageError> {
    let c = &ctx.config;
    let corpus = ctx.corpus()?;
    let (report, path) = if per_sample {
        let sets = per_sample_predictions(&ctx.annotation_sets()?);
        let report = metrics::evaluate_pooled(&sets, &corpus, &ctx.taxonomy, c.tau)
            .map_err(|e| StageError::ingest(&c.paths.annotations(), e))?;
        let base = c.paths.report();
        let stem = base.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        (report, base.with_file_name(format!("{stem}_per_sample.json")))
    } else {
        let report = metrics::evaluate(&predictions(&ctx.votes()?), &corpus, &ctx.taxonomy, c.tau)
            .map_err(|e| StageError::ingest(&c.paths.votes(), e))?;
        (report, c.paths.report())
    };
    let table = format!("{}config: {}\n", metrics::render_table(&report), ctx.fingerprint);
    let writer = ctx.writer("evaluate");
    writer.json(&path, &report)?;
    writer.text(&sibling(&path, "txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn sweep(ctx: &Context) -> Result<(), StageError> {
    let c = &ctx.config;
    let corpus = ctx.corpus()?;
    let reports = metrics::sweep(&predictions(&ctx.votes()?), &corpus, &ctx.taxonomy)
        .map_err(|e| StageError::ingest(&c.paths.votes(), e))?;
    let writer = ctx.writer("sweep");
    let csv = metrics::sweep_csv(&reports);
    writer.text(&c.paths.sweep(), &csv)?;
    writer.json(&sibling(&c.paths.sweep(), "json"), &SweepDoc { reports })?;
    print!("{csv}");
    Ok(())
}

pub fn plot(ctx: &Context) -> Result<(), StageError> {
    let c = &ctx.config;
    let doc: SweepDoc = read_json(&sibling(&c.paths.sweep(), "json"), "sweep results")?;
    ctx.writer("plot").text(&c.paths.plot(), &metrics::plot_svg(&doc.reports))
}
