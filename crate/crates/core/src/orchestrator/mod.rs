//! Repeated sampling of profiling annotations from a backend.

mod http;
pub mod mock;
pub mod prompt;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{parse_annotation, ParseOutcome};
use crate::records::UserRecord;
use crate::taxonomy::Taxonomy;

pub use http::HttpChatBackend;
pub use mock::{mock_infer, MockSettings};
pub use prompt::{render_prompt, PromptTemplate};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    MalformedBody(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    fn retriable(&self) -> bool {
        !matches!(self, Self::MissingCredential(_) | Self::Config(_))
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("backend unavailable: no sample succeeded ({0})")]
    BackendUnavailable(String),
    #[error("raw sample store: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub m_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_parallel: usize,
    /// Extra attempts after the first, applied both to transport failures and
    /// to completions that contain no well-formed dimension.
    pub retry_limit: usize,
    pub retry_backoff_ms: u64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            m_samples: 10,
            temperature: 1.0,
            top_p: 0.95,
            max_parallel: 8,
            retry_limit: 2,
            retry_backoff_ms: 200,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: Option<String>,
    pub model_name: String,
    pub timeout_secs: u64,
    pub mock: MockSettings,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            auth_env_var: None,
            model_name: "profiler".into(),
            timeout_secs: 60,
            mock: MockSettings::default(),
        }
    }
}

pub struct SampleRequest<'a> {
    pub record: &'a UserRecord,
    pub system_message: &'a str,
    pub prompt: &'a str,
    pub sample_index: usize,
    pub attempt: usize,
}

pub trait Backend: Sync {
    fn complete(&self, request: &SampleRequest<'_>) -> Result<String, BackendError>;
}

pub struct MockBackend {
    pub taxonomy: Taxonomy,
    pub seed: u64,
    pub settings: MockSettings,
}

impl MockBackend {
    pub fn new(taxonomy: Taxonomy, seed: u64, settings: MockSettings) -> Self {
        Self {
            taxonomy,
            seed,
            settings,
        }
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &SampleRequest<'_>) -> Result<String, BackendError> {
        let record = request.record;
        let seed = mock::sample_seed(
            self.seed,
            &record.record_id,
            request.sample_index * 1000 + request.attempt,
        );
        Ok(mock_infer(record, &self.taxonomy, seed, self.seed, self.settings))
    }
}

/// Builds the backend described by `spec`. The mock needs the taxonomy and
/// the sampling seed; the HTTP backend needs only `spec` and the sampling
/// parameters.
pub fn build_backend(
    spec: &BackendSpec,
    sampling: &SamplingConfig,
    taxonomy: &Taxonomy,
) -> Result<Box<dyn Backend>, BackendError> {
    match spec.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend::new(
            taxonomy.clone(),
            sampling.seed,
            spec.mock,
        ))),
        BackendKind::HttpChat => Ok(Box::new(HttpChatBackend::new(spec, sampling)?)),
    }
}

/// One raw completion as persisted before parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub record_id: String,
    pub sample_index: usize,
    pub raw_text: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait RawSink: Sync {
    fn append(&self, sample: &RawSample) -> io::Result<()>;
}

pub struct NullSink;

impl RawSink for NullSink {
    fn append(&self, _: &RawSample) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    pub samples: Mutex<Vec<RawSample>>,
}

impl RawSink for MemorySink {
    fn append(&self, sample: &RawSample) -> io::Result<()> {
        self.samples.lock().expect("sink lock").push(sample.clone());
        Ok(())
    }
}

/// Append-only JSONL store, flushed after every line.
pub struct JsonlSink {
    writer: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self {
            writer: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }
}

impl RawSink for JsonlSink {
    fn append(&self, sample: &RawSample) -> io::Result<()> {
        let line = serde_json::to_string(sample).map_err(io::Error::other)?;
        let mut w = self.writer.lock().expect("sink lock");
        writeln!(w, "{line}")?;
        w.flush()
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub record_id: String,
    pub sample_index: usize,
    pub raw_text: String,
    pub outcome: ParseOutcome,
    /// False when every attempt failed at the transport level; the outcome
    /// is then an all-malformed placeholder.
    pub succeeded: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    backend: &dyn Backend,
    config: &SamplingConfig,
    taxonomy: &Taxonomy,
    system_message: &str,
    record: &UserRecord,
    prompt: &str,
    sample_index: usize,
    sink: &dyn RawSink,
) -> Result<SampleOutcome, io::Error> {
    let mut last_error = None;
    let mut last_text = None;
    for attempt in 0..=config.retry_limit {
        if attempt > 0 && config.retry_backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(config.retry_backoff_ms << (attempt - 1).min(6)));
        }
        let request = SampleRequest {
            record,
            system_message,
            prompt,
            sample_index,
            attempt,
        };
        match backend.complete(&request) {
            Ok(text) => {
                sink.append(&RawSample {
                    record_id: record.record_id.clone(),
                    sample_index,
                    raw_text: text.clone(),
                    timestamp: chrono::Utc::now().to_rfc3339(),
                    error: None,
                })?;
                let outcome = parse_annotation(&text, taxonomy);
                if outcome.outputs.iter().any(|o| o.well_formed) {
                    return Ok(SampleOutcome {
                        record_id: record.record_id.clone(),
                        sample_index,
                        raw_text: text,
                        outcome,
                        succeeded: true,
                    });
                }
                log::debug!(
                    "record {} sample {sample_index}: nothing parseable on attempt {attempt}",
                    record.record_id
                );
                last_text = Some((text, outcome));
            }
            Err(e) => {
                log::warn!(
                    "record {} sample {sample_index} attempt {attempt}: {e}",
                    record.record_id
                );
                let stop = !e.retriable();
                last_error = Some(e);
                if stop {
                    break;
                }
            }
        }
    }
    if let Some((text, outcome)) = last_text {
        // The backend answered; the answer is just unusable.
        return Ok(SampleOutcome {
            record_id: record.record_id.clone(),
            sample_index,
            raw_text: text,
            outcome,
            succeeded: true,
        });
    }
    let error = last_error.map(|e| e.to_string()).unwrap_or_default();
    sink.append(&RawSample {
        record_id: record.record_id.clone(),
        sample_index,
        raw_text: String::new(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        error: Some(error),
    })?;
    Ok(SampleOutcome {
        record_id: record.record_id.clone(),
        sample_index,
        raw_text: String::new(),
        outcome: parse_annotation("", taxonomy),
        succeeded: false,
    })
}

/// Draws `m_samples` annotations for every record, with at most
/// `max_parallel` requests in flight. The result is grouped by record in
/// input order, samples in index order.
pub fn sample_corpus(
    backend: &dyn Backend,
    config: &SamplingConfig,
    template: &PromptTemplate,
    records: &[UserRecord],
    taxonomy: &Taxonomy,
    sink: &dyn RawSink,
) -> Result<Vec<Vec<SampleOutcome>>, OrchestratorError> {
    let m = config.m_samples.max(1);
    let prompts: Vec<String> = records
        .iter()
        .map(|r| render_prompt(template, r, taxonomy))
        .collect();
    let jobs = records.len() * m;
    let slots: Mutex<Vec<Option<SampleOutcome>>> = Mutex::new(vec![None; jobs]);
    let next = AtomicUsize::new(0);
    let sink_error: Mutex<Option<io::Error>> = Mutex::new(None);
    let workers = config.max_parallel.max(1).min(jobs.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = next.fetch_add(1, Ordering::SeqCst);
                if job >= jobs || sink_error.lock().expect("lock").is_some() {
                    break;
                }
                let (ri, si) = (job / m, job % m);
                match run_one(
                    backend,
                    config,
                    taxonomy,
                    &template.system_message,
                    &records[ri],
                    &prompts[ri],
                    si,
                    sink,
                ) {
                    Ok(outcome) => slots.lock().expect("lock")[job] = Some(outcome),
                    Err(e) => {
                        *sink_error.lock().expect("lock") = Some(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = sink_error.into_inner().expect("lock") {
        return Err(OrchestratorError::Sink(e));
    }
    let mut flat = slots.into_inner().expect("lock").into_iter().map(|s| s.expect("every job ran"));
    let grouped: Vec<Vec<SampleOutcome>> = (0..records.len())
        .map(|_| flat.by_ref().take(m).collect())
        .collect();
    if jobs > 0 && !grouped.iter().flatten().any(|s| s.succeeded) {
        return Err(OrchestratorError::BackendUnavailable(format!(
            "{jobs} requests failed"
        )));
    }
    for group in &grouped {
        if !group.iter().any(|s| s.succeeded) {
            log::warn!("record {}: every sample failed", group[0].record_id);
        }
    }
    Ok(grouped)
}

/// Samples a single record.
pub fn sample_record(
    backend: &dyn Backend,
    config: &SamplingConfig,
    template: &PromptTemplate,
    record: &UserRecord,
    taxonomy: &Taxonomy,
    sink: &dyn RawSink,
) -> Result<Vec<SampleOutcome>, OrchestratorError> {
    let mut all = sample_corpus(
        backend,
        config,
        template,
        std::slice::from_ref(record),
        taxonomy,
        sink,
    )?;
    Ok(all.pop().unwrap_or_default())
}
