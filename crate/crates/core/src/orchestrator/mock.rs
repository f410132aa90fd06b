//! Seeded stand-in for a model backend.
//!
//! The mock reads the record's gold profile and oracle evidence flags, so its
//! accuracy and its confidence are controlled exactly: with probability
//! `fidelity` a dimension gets the gold tag (confidence 4–5 when the cues
//! carry evidence, 1–2 when they do not), otherwise a uniformly drawn wrong
//! tag, possibly the abstention tag, with confidence 1–3.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::render_block;
use crate::fingerprint;
use crate::records::UserRecord;
use crate::taxonomy::{Taxonomy, TaxonomyDimension};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub fidelity: f64,
    /// Per-dimension probability of emitting a corrupted block.
    pub malformed_rate: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            fidelity: 0.9,
            malformed_rate: 0.0,
        }
    }
}

/// Seed for one sample of one record.
pub fn sample_seed(seed: u64, record_id: &str, sample_index: usize) -> u64 {
    fingerprint::derive_seed(seed, &format!("mock:{record_id}:{sample_index}"))
}

fn latent_tag<'a>(record: &'a UserRecord, dim: &'a TaxonomyDimension, seed: u64) -> &'a str {
    if let Some(gold) = record.gold_tag(&dim.id) {
        if !dim.is_na(gold) {
            return gold;
        }
    }
    let informative: Vec<&str> = dim.informative_tags().collect();
    let h = fingerprint::derive_seed(seed, &format!("latent:{}:{}", record.record_id, dim.id));
    informative[(h % informative.len() as u64) as usize]
}

fn evidence_for(record: &UserRecord, rng: &mut ChaCha8Rng) -> String {
    match record.behavioral_cues.choose(rng) {
        Some(cue) => format!("user engages with \"{cue}\""),
        None => "inferred from the overall profile".to_string(),
    }
}

/// One mock annotation text. `seed` should already be specific to the sample
/// (see [`sample_seed`]); `latent_seed` fixes the hidden truth of unlabeled
/// records and must not vary across samples.
pub fn mock_infer(
    record: &UserRecord,
    taxonomy: &Taxonomy,
    seed: u64,
    latent_seed: u64,
    settings: MockSettings,
) -> String {
    let fidelity = settings.fidelity.clamp(0.0, 1.0);
    let malformed_rate = settings.malformed_rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(taxonomy.len());
    for dim in taxonomy.dimensions() {
        let truth = latent_tag(record, dim, latent_seed);
        let (tag, confidence) = if rng.gen_bool(fidelity) {
            let c = if record.evidence_present(&dim.id) {
                rng.gen_range(4..=5)
            } else {
                rng.gen_range(1..=2)
            };
            (truth.to_string(), c)
        } else {
            let wrong: Vec<&String> = dim.tags.iter().filter(|t| *t != truth).collect();
            let tag = (*wrong.choose(&mut rng).expect("at least two tags")).clone();
            (tag, rng.gen_range(1..=3))
        };
        let evidence = if dim.is_na(&tag) {
            String::new()
        } else {
            evidence_for(record, &mut rng)
        };
        let corrupt = rng.gen_bool(malformed_rate);
        let block = if corrupt {
            match rng.gen_range(0..4) {
                0 => continue,
                1 => render_block(&dim.id, &tag, &confidence.to_string(), &evidence)
                    .replace(&format!("<score>{confidence}</score>"), ""),
                2 => render_block(&dim.id, &format!("{tag}?"), &confidence.to_string(), &evidence),
                _ => render_block(&dim.id, &tag, "6", &evidence),
            }
        } else {
            render_block(&dim.id, &tag, &confidence.to_string(), &evidence)
        };
        blocks.push(block);
    }
    blocks.join("\n")
}
