//! Abstention-aware evaluation.
//!
//! Per dimension, only records whose gold tag is known and not the abstention
//! tag are scored. A prediction is *attempted* when it is not the abstention
//! tag after thresholding. Precision is accuracy over attempted predictions;
//! recall is the fraction of scored records that were attempted (coverage).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::ConfidenceLevel;
use crate::records::Corpus;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction references unknown record `{0}`")]
    UnknownRecordId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeveledTag {
    pub tag: String,
    pub level: ConfidenceLevel,
}

impl LeveledTag {
    pub fn new(tag: impl Into<String>, level: ConfidenceLevel) -> Self {
        Self {
            tag: tag.into(),
            level,
        }
    }
}

/// Dimension id → prediction for one record.
pub type LeveledProfile = BTreeMap<String, LeveledTag>;

/// Record id → prediction.
pub type Predictions = BTreeMap<String, LeveledProfile>;

/// Keeps a tag iff its level is at least `tau`; otherwise abstains.
/// Dimensions missing from the prediction come back as abstentions.
pub fn apply_threshold(
    prediction: &LeveledProfile,
    taxonomy: &Taxonomy,
    tau: ConfidenceLevel,
) -> BTreeMap<String, String> {
    taxonomy
        .dimensions()
        .iter()
        .map(|dim| {
            let tag = match prediction.get(&dim.id) {
                Some(p) if p.level >= tau => p.tag.clone(),
                _ => dim.na_tag.clone(),
            };
            (dim.id.clone(), tag)
        })
        .collect()
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub dimension_id: String,
    pub attempted: u64,
    pub correct: u64,
    pub gold_known: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DimensionMetrics {
    fn from_counts(dimension_id: &str, attempted: u64, correct: u64, gold_known: u64) -> Self {
        let precision = ratio(correct, attempted);
        let recall = ratio(attempted, gold_known);
        Self {
            dimension_id: dimension_id.to_string(),
            attempted,
            correct,
            gold_known,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MacroAverage {
    /// Unweighted mean of each per-dimension value. The F1 here is the mean
    /// of the dimension F1s, not the F1 of the mean precision and recall.
    pub fn of(dimensions: &[DimensionMetrics]) -> Self {
        let n = dimensions.len().max(1) as f64;
        Self {
            precision: dimensions.iter().map(|d| d.precision).sum::<f64>() / n,
            recall: dimensions.iter().map(|d| d.recall).sum::<f64>() / n,
            f1: dimensions.iter().map(|d| d.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: ConfidenceLevel,
    pub dimensions: Vec<DimensionMetrics>,
    pub macro_average: MacroAverage,
    pub prediction_count: usize,
}

impl EvalReport {
    fn from_dimensions(
        tau: ConfidenceLevel,
        dimensions: Vec<DimensionMetrics>,
        prediction_count: usize,
    ) -> Self {
        let macro_average = MacroAverage::of(&dimensions);
        Self {
            tau,
            dimensions,
            macro_average,
            prediction_count,
        }
    }

    pub fn dimension(&self, id: &str) -> Option<&DimensionMetrics> {
        self.dimensions.iter().find(|d| d.dimension_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    attempted: u64,
    correct: u64,
    gold_known: u64,
}

fn count(
    predictions: &Predictions,
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    tau: ConfidenceLevel,
    counts: &mut BTreeMap<String, Counts>,
) -> Result<(), MetricsError> {
    let index = corpus.index();
    if let Some(unknown) = predictions.keys().find(|id| !index.contains_key(id.as_str())) {
        return Err(MetricsError::UnknownRecordId(unknown.clone()));
    }
    let empty = LeveledProfile::new();
    for record in &corpus.records {
        let prediction = predictions.get(&record.record_id).unwrap_or(&empty);
        let thresholded = apply_threshold(prediction, taxonomy, tau);
        for dim in taxonomy.dimensions() {
            let Some(gold) = record.gold_tag(&dim.id) else {
                continue;
            };
            if dim.is_na(gold) {
                continue;
            }
            let c = counts.entry(dim.id.clone()).or_default();
            c.gold_known += 1;
            let predicted = &thresholded[&dim.id];
            if !dim.is_na(predicted) {
                c.attempted += 1;
                if predicted == gold {
                    c.correct += 1;
                }
            }
        }
    }
    Ok(())
}

fn report_from_counts(
    taxonomy: &Taxonomy,
    counts: &BTreeMap<String, Counts>,
    tau: ConfidenceLevel,
    prediction_count: usize,
) -> EvalReport {
    let dims = taxonomy
        .dimensions()
        .iter()
        .map(|d| {
            let c = counts.get(&d.id).copied().unwrap_or_default();
            DimensionMetrics::from_counts(&d.id, c.attempted, c.correct, c.gold_known)
        })
        .collect();
    EvalReport::from_dimensions(tau, dims, prediction_count)
}

pub fn evaluate(
    predictions: &Predictions,
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    tau: ConfidenceLevel,
) -> Result<EvalReport, MetricsError> {
    let mut counts = BTreeMap::new();
    count(predictions, corpus, taxonomy, tau, &mut counts)?;
    Ok(report_from_counts(taxonomy, &counts, tau, predictions.len()))
}

/// Scores several independent prediction sets (e.g. one per sample index) as
/// one pooled evaluation: counts are summed across sets before the ratios
/// are taken.
pub fn evaluate_pooled(
    prediction_sets: &[Predictions],
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    tau: ConfidenceLevel,
) -> Result<EvalReport, MetricsError> {
    let mut counts = BTreeMap::new();
    for set in prediction_sets {
        count(set, corpus, taxonomy, tau, &mut counts)?;
    }
    let total = prediction_sets.iter().map(BTreeMap::len).sum();
    Ok(report_from_counts(taxonomy, &counts, tau, total))
}

/// One report per threshold 1..=5.
pub fn sweep(
    predictions: &Predictions,
    corpus: &Corpus,
    taxonomy: &Taxonomy,
) -> Result<Vec<EvalReport>, MetricsError> {
    ConfidenceLevel::all()
        .map(|tau| evaluate(predictions, corpus, taxonomy, tau))
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Aligned-column text rendering of one report.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tau = {}  predictions = {}", report.tau, report.prediction_count);
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}",
        "dimension", "precision", "recall", "f1", "attempted", "correct", "gold_known"
    );
    for d in &report.dimensions {
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}",
            d.dimension_id,
            pct(d.precision),
            pct(d.recall),
            pct(d.f1),
            d.attempted,
            d.correct,
            d.gold_known
        );
    }
    let m = report.macro_average;
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>9} {:>9}",
        "average",
        pct(m.precision),
        pct(m.recall),
        pct(m.f1)
    );
    out
}

/// One row per threshold: macro precision/recall/F1 followed by the
/// per-dimension precision/recall/F1 columns, all as fractions.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("tau,precision,recall,f1");
    if let Some(first) = reports.first() {
        for d in &first.dimensions {
            let _ = write!(
                out,
                ",{0}_precision,{0}_recall,{0}_f1",
                d.dimension_id
            );
        }
    }
    out.push('\n');
    for r in reports {
        let m = r.macro_average;
        let _ = write!(out, "{},{:.6},{:.6},{:.6}", r.tau, m.precision, m.recall, m.f1);
        for d in &r.dimensions {
            let _ = write!(out, ",{:.6},{:.6},{:.6}", d.precision, d.recall, d.f1);
        }
        out.push('\n');
    }
    out
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Two-panel SVG of precision and recall against the threshold.
pub fn plot_svg(reports: &[EvalReport]) -> String {
    const PANEL_W: f64 = 360.0;
    const PANEL_H: f64 = 260.0;
    const MARGIN: f64 = 40.0;
    let width = 2.0 * (PANEL_W + MARGIN) + MARGIN + 140.0;
    let height = PANEL_H + 2.0 * MARGIN;

    type Points = Vec<(f64, f64)>;
    let mut series: Vec<(String, Points, Points)> = Vec::new();
    if let Some(first) = reports.first() {
        for (i, d) in first.dimensions.iter().enumerate() {
            let pick = |f: fn(&DimensionMetrics) -> f64| {
                reports
                    .iter()
                    .map(|r| (f64::from(r.tau.get()), f(&r.dimensions[i])))
                    .collect::<Vec<_>>()
            };
            series.push((d.dimension_id.clone(), pick(|d| d.precision), pick(|d| d.recall)));
        }
        series.push((
            "average".into(),
            reports
                .iter()
                .map(|r| (f64::from(r.tau.get()), r.macro_average.precision))
                .collect(),
            reports
                .iter()
                .map(|r| (f64::from(r.tau.get()), r.macro_average.recall))
                .collect(),
        ));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (panel, title) in ["precision", "recall"].iter().enumerate() {
        let x0 = MARGIN + panel as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let _ = writeln!(
            svg,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{title} vs tau</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 10.0
        );
        for tau in 1..=5 {
            let x = x0 + (f64::from(tau) - 1.0) / 4.0 * PANEL_W;
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{}" text-anchor="middle">{tau}</text>"#,
                y0 + PANEL_H + 14.0
            );
        }
        for tick in [0.0, 0.5, 1.0] {
            let y = y0 + PANEL_H - tick * PANEL_H;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{y}" text-anchor="end">{tick:.1}</text>"#,
                x0 - 4.0
            );
        }
        for (i, (_, precision, recall)) in series.iter().enumerate() {
            let pts = if panel == 0 { precision } else { recall };
            let path: Vec<String> = pts
                .iter()
                .map(|(t, v)| {
                    format!(
                        "{:.1},{:.1}",
                        x0 + (t - 1.0) / 4.0 * PANEL_W,
                        y0 + PANEL_H - v.clamp(0.0, 1.0) * PANEL_H
                    )
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                PALETTE[i % PALETTE.len()],
                path.join(" ")
            );
        }
    }
    let legend_x = 2.0 * (PANEL_W + MARGIN) + MARGIN;
    for (i, (name, _, _)) in series.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{legend_x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{name}</text>"#,
            y,
            PALETTE[i % PALETTE.len()],
            legend_x + 14.0,
            y + 9.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
