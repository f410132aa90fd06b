//! Prompt rendering for profiling requests.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{render_block, VERBAL_SCALE};
use crate::records::UserRecord;
use crate::taxonomy::Taxonomy;

pub const NONE_PROVIDED: &str = "(none provided)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_message: String,
    pub task_description: String,
    pub analysis_principles: Vec<String>,
    pub confidence_criteria: Vec<String>,
    /// One-shot example rendered in the output-format section. It is a
    /// synthetic illustration, not a real user.
    pub exemplar: Option<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_message: "You are a careful user-profiling analyst. You answer only in the requested format.".into(),
            task_description: "Infer the user's profile from the information below. For every dimension of the \
                               profiling system, choose exactly one tag from its closed list, rate your confidence, \
                               and cite the evidence that supports the tag."
                .into(),
            analysis_principles: vec![
                "Base every tag on concrete evidence from the user information; do not guess.".into(),
                "If the information is missing, contradictory or too weak for a dimension, answer Unknown(NA) for it.".into(),
                "Self-reported demographic fields may be outdated or wrong; weigh them against behavioural cues.".into(),
                "Use tag strings exactly as listed, including capitalisation and punctuation.".into(),
            ],
            confidence_criteria: vec![
                "very high: explicit, consistent evidence points to the tag.".into(),
                "high: strong evidence with minor ambiguity.".into(),
                "medium: indirect evidence that makes the tag more likely than the alternatives.".into(),
                "low: weak or partly conflicting evidence.".into(),
                "very low: speculative inference.".into(),
            ],
            exemplar: Some(
                [
                    render_block("gender", "Female", "4", "watches makeup tutorials and dress try-on hauls"),
                    render_block("age", "Unknown(NA)", "1", ""),
                ]
                .join("\n"),
            ),
        }
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic prompt text for one record.
pub fn render_prompt(template: &PromptTemplate, record: &UserRecord, taxonomy: &Taxonomy) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Task\n{}\n", template.task_description);

    out.push_str("## Analysis principles\n");
    for (i, p) in template.analysis_principles.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, p);
    }

    out.push_str("\n## Profiling system\n");
    for dim in taxonomy.dimensions() {
        let tags: Vec<String> = dim.tags.iter().map(|t| format!("\"{t}\"")).collect();
        let _ = writeln!(out, "- {} (`{}`): {}", dim.display_name, dim.id, tags.join(", "));
    }

    out.push_str("\n## Confidence scoring\n");
    let _ = writeln!(
        out,
        "Score each tag on a 5-level scale, 1 = {} up to 5 = {}:",
        VERBAL_SCALE[0], VERBAL_SCALE[4]
    );
    for c in &template.confidence_criteria {
        let _ = writeln!(out, "- {c}");
    }

    out.push_str("\n## Output format\n");
    out.push_str("Emit one block per dimension, in the order listed above:\n");
    let _ = writeln!(
        out,
        "{}",
        render_block("{dimension_id}", "{tag}", "{1-5}", "{evidence}")
    );
    out.push_str("Write &, < and > inside elements as &amp;, &lt; and &gt;. Leave evidence empty only for Unknown(NA).\n");
    if let Some(example) = &template.exemplar {
        let _ = writeln!(out, "Example (partial):\n{example}");
    }

    out.push_str("\n## User information\n");
    out.push_str("Behavioral keyphrases:\n");
    if record.behavioral_cues.is_empty() {
        let _ = writeln!(out, "{NONE_PROVIDED}");
    } else {
        for cue in &record.behavioral_cues {
            let _ = writeln!(out, "- {}", one_line(cue));
        }
    }
    out.push_str("Demographic fields:\n");
    let demographics: Vec<_> = record
        .demographic_cues
        .iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .collect();
    if demographics.is_empty() {
        let _ = writeln!(out, "{NONE_PROVIDED}");
    } else {
        for (field, value) in demographics {
            let _ = writeln!(out, "{}: {}", one_line(field), one_line(value));
        }
    }
    out
}
