//! Confidence machinery for label-free user profiling.
//!
//! Several noisy model annotations per user record are voted into pseudo-labels
//! (`aggregation`), calibrated into balanced 1..5 confidence levels, rendered
//! into supervised fine-tuning data or filtered by difficulty (`curation`), and
//! turned into per-rollout RL rewards against a self-voted target (`reward`).
//! `metrics` scores predictions with explicit abstention.

pub mod aggregation;
pub mod annotation;
pub mod curation;
pub mod fingerprint;
pub mod jsonl;
pub mod metrics;
pub mod orchestrator;
pub mod records;
pub mod reward;
pub mod taxonomy;

pub use aggregation::{
    aggregate_record, apply_calibration, fit_calibration, tally, vote, AggregatedDimension,
    CalibratedConfidence, CalibrationTable, Strategy, VoteResult, VoteTally,
};
pub use annotation::{
    parse_annotation, render_annotation, verbal_to_level, AnnotationSet, ConfidenceLevel,
    DimensionAnnotation, ParseOutcome, RawDimensionOutput,
};
pub use records::{Corpus, Profile, UserRecord};
pub use taxonomy::{Taxonomy, TaxonomyDimension};
