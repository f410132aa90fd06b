//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Every oracle here is written from scratch
//! against the definitions, not against the library's internals.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use labelfree::aggregation::{self, AggregatedDimension, Strategy};
use labelfree::annotation::{parse_annotation_bytes, AnnotationSet, ConfidenceLevel, DimensionAnnotation};
use labelfree::curation::{filter_with_report, DifficultyProfile, ShapeName, ShapeSpec};
use labelfree::metrics::{self, DimensionMetrics, LeveledTag, MacroAverage, Predictions};
use labelfree::orchestrator::{sample_corpus, MockBackend, MockSettings, NullSink, PromptTemplate, SamplingConfig};
use labelfree::records::{generate_synthetic_corpus, Corpus};
use labelfree::reward::{self, ReferenceConfidence, RewardMode};
use labelfree::{parse_annotation, render_annotation, Taxonomy, TaxonomyDimension};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lv(n: i64) -> ConfidenceLevel {
    ConfidenceLevel::new(n).unwrap()
}

// 1 ----------------------------------------------------------------------

/// (stage, tau, dimension, precision, recall, printed F1) for the age and
/// gender columns of the detailed threshold table.
const AGE_GENDER: &[(&str, u8, &str, f64, f64, f64)] = &[
    ("sft", 1, "age", 72.14, 99.93, 83.79),
    ("sft", 1, "gender", 92.84, 99.95, 96.26),
    ("sft", 2, "age", 75.52, 89.90, 82.08),
    ("sft", 2, "gender", 94.60, 90.87, 92.70),
    ("sft", 3, "age", 76.77, 78.37, 77.56),
    ("sft", 3, "gender", 95.91, 83.12, 89.06),
    ("sft", 4, "age", 77.49, 62.53, 69.21),
    ("sft", 4, "gender", 97.03, 72.98, 83.30),
    ("sft", 5, "age", 78.95, 46.81, 58.77),
    ("sft", 5, "gender", 97.48, 66.56, 79.11),
    ("sft+rl", 1, "age", 73.29, 99.87, 84.54),
    ("sft+rl", 1, "gender", 92.96, 99.87, 96.29),
    ("sft+rl", 2, "age", 75.11, 93.43, 83.27),
    ("sft+rl", 2, "gender", 94.18, 93.50, 93.84),
    ("sft+rl", 3, "age", 76.48, 84.36, 80.23),
    ("sft+rl", 3, "gender", 96.15, 82.76, 88.96),
    ("sft+rl", 4, "age", 77.74, 69.65, 73.47),
    ("sft+rl", 4, "gender", 97.76, 71.09, 82.32),
    ("sft+rl", 5, "age", 77.27, 52.74, 62.69),
    ("sft+rl", 5, "gender", 98.21, 65.43, 78.54),
];

/// The tau=1 rows of the final trained model: per-dimension precision,
/// recall and F1, then the printed averages.
const FINAL_ROW: ([f64; 6], [f64; 6], [f64; 6], [f64; 3]) = (
    [73.29, 92.96, 61.24, 57.68, 49.20, 54.59],
    [99.87, 99.87, 86.25, 87.99, 72.28, 60.79],
    [84.54, 96.29, 71.63, 69.68, 58.55, 57.52],
    [64.83, 84.51, 73.03],
);

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(stage, tau, dim, p, r, printed) in AGE_GENDER {
        let f = metrics::f1(p / 100.0, r / 100.0) * 100.0;
        worst = worst.max((f - printed).abs());
        check((f - printed).abs() <= 0.02, || {
            format!("{stage} tau={tau} {dim}: {p}/{r} gives {f:.3}, table prints {printed}")
        })?;
    }

    let (p, r, f, avg) = FINAL_ROW;
    for k in 0..6 {
        let ours = metrics::f1(p[k] / 100.0, r[k] / 100.0) * 100.0;
        check((ours - f[k]).abs() <= 0.02, || format!("final row column {k}: {ours:.3} vs {}", f[k]))?;
    }
    let dims: Vec<DimensionMetrics> = (0..6)
        .map(|k| DimensionMetrics {
            dimension_id: format!("d{k}"),
            precision: p[k] / 100.0,
            recall: r[k] / 100.0,
            f1: f[k] / 100.0,
            ..DimensionMetrics::default()
        })
        .collect();
    let m = MacroAverage::of(&dims);
    for (ours, printed, what) in [(m.precision, avg[0], "precision"), (m.recall, avg[1], "recall"), (m.f1, avg[2], "F1")] {
        check((ours * 100.0 - printed).abs() <= 0.02, || {
            format!("average {what}: {:.3} vs printed {printed}", ours * 100.0)
        })?;
    }
    // The averaged precision/recall pair does not give the averaged F1; the
    // printed average is the mean of the six dimension F1s.
    let f_of_means = metrics::f1(avg[0] / 100.0, avg[1] / 100.0) * 100.0;
    check((f_of_means - 73.37).abs() < 0.01, || format!("F1 of averages {f_of_means:.3}"))?;
    Ok(format!(
        "{} age/gender cells, max |dF1| {worst:.4}; average row = mean of dimension values ({:.3}); F1(64.83, 84.51) = {f_of_means:.2}",
        AGE_GENDER.len(),
        m.f1 * 100.0
    ))
}

// 2 ----------------------------------------------------------------------

fn criterion_2() -> Outcome {
    check(reward::weight(lv(1)) == 0.2, || "weight(1) != 0.2".into())?;
    check(reward::weight(lv(5)) == 1.0, || "weight(5) != 1.0".into())?;
    for c in 1..=5 {
        let w = reward::weight(lv(c));
        check(w == c as f64 / 5.0, || format!("weight({c}) = {w}"))?;
    }
    Ok("weights 0.2, 0.4, 0.6, 0.8, 1.0".into())
}

// 3 ----------------------------------------------------------------------

fn one_dimension(tags: usize, na_at: usize) -> Taxonomy {
    let mut names: Vec<String> = (0..tags - 1).map(|i| format!("t{i}")).collect();
    names.insert(na_at, "NA".into());
    Taxonomy::new(vec![TaxonomyDimension {
        id: "d".into(),
        display_name: "D".into(),
        tags: names,
        na_tag: "NA".into(),
    }])
    .unwrap()
}

/// Winner by pairwise dominance: a tag wins if no other tag beats it, where
/// a higher score beats a lower one and on equal scores NA beats everything,
/// otherwise the tag listed first does.
fn oracle_winner(dim: &TaxonomyDimension, votes: &[(usize, u32)], weighted: bool) -> (String, u32) {
    let score = |t: usize| -> u32 {
        votes
            .iter()
            .filter(|(tag, _)| *tag == t)
            .map(|(_, c)| if weighted { *c } else { 1 })
            .sum()
    };
    let na = dim.tags.iter().position(|t| *t == dim.na_tag).unwrap();
    let beats = |a: usize, b: usize| -> bool {
        let (sa, sb) = (score(a), score(b));
        sa > sb || (sa == sb && (a == na || (b != na && a < b)))
    };
    let n = dim.tags.len();
    let winner = (0..n)
        .find(|&a| (0..n).all(|b| b == a || beats(a, b)))
        .expect("dominance is total");
    (dim.tags[winner].clone(), score(winner))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0usize;
    let mut empty = 0usize;
    for instance in 0..10_000 {
        let k = rng.gen_range(2..=4);
        let tax = one_dimension(k, rng.gen_range(0..k));
        let dim = &tax.dimensions()[0];
        let m = rng.gen_range(1..=6);
        let mut votes = Vec::new();
        let mut samples = Vec::new();
        for i in 0..m {
            let mut anns = Vec::new();
            if rng.gen_bool(0.9) {
                let t = rng.gen_range(0..k);
                let c = rng.gen_range(1..=5u32);
                votes.push((t, c));
                anns.push(DimensionAnnotation::new("d", dim.tags[t].clone(), lv(c as i64), "e"));
            }
            samples.push(AnnotationSet::partial("r", i, anns, &tax).unwrap());
        }
        for (strategy, weighted) in [(Strategy::ConfidenceWeighted, true), (Strategy::Majority, false)] {
            let tally = aggregation::tally(&samples, dim, strategy);
            if votes.is_empty() {
                check(tally.is_err(), || format!("instance {instance}: empty tally accepted"))?;
                empty += 1;
                continue;
            }
            let got = aggregation::vote(&tally.map_err(|e| e.to_string())?);
            let (tag, score) = oracle_winner(dim, &votes, weighted);
            check(got.voted_tag == tag && got.winning_score == score, || {
                format!(
                    "instance {instance} {strategy}: votes {votes:?} over {:?} gave {} ({}), oracle {tag} ({score})",
                    dim.tags, got.voted_tag, got.winning_score
                )
            })?;
            let top_count = (0..k)
                .filter(|&t| {
                    let s: u32 = votes.iter().filter(|v| v.0 == t).map(|v| if weighted { v.1 } else { 1 }).sum();
                    s == score
                })
                .count();
            if top_count > 1 {
                ties += 1;
            }
        }
    }
    Ok(format!("20000 strategy x instance checks, 0 mismatches, {ties} tied tops, {empty} empty"))
}

// 4 ----------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut distinct_sets = 0;
    let mut worst_dev: f64 = 0.0;
    for set in 0..1000 {
        let n = if set % 10 == 0 { rng.gen_range(5..=20) } else { rng.gen_range(5..=5000) };
        let distinct = set % 2 == 0;
        let scores: Vec<f64> = if distinct {
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 + 1.0).collect();
            v.shuffle(&mut rng);
            v
        } else {
            let range = rng.gen_range(1..=25);
            (0..n).map(|_| rng.gen_range(0..range) as f64).collect()
        };
        let table = aggregation::fit_calibration(&scores, "d").map_err(|e| e.to_string())?;

        if distinct {
            distinct_sets += 1;
            let mut counts = [0usize; 5];
            for s in &scores {
                counts[usize::from(aggregation::apply_calibration(&table, *s).level.get()) - 1] += 1;
            }
            for c in counts {
                let dev = (c as f64 - n as f64 / 5.0).abs();
                worst_dev = worst_dev.max(dev);
                check(dev <= 1.0, || format!("set {set} (n={n}): bin counts {counts:?}"))?;
            }
        }
        if scores.iter().all(|s| *s == scores[0]) {
            let level = aggregation::apply_calibration(&table, scores[0]).level.get();
            check(level == 3, || format!("set {set}: all-equal scores map to {level}"))?;
        }

        let mut queries: Vec<f64> = scores.iter().copied().step_by((n / 400).max(1)).collect();
        queries.extend(table.boundaries);
        queries.extend(table.boundaries.iter().map(|b| b + 0.25));
        queries.extend([f64::MIN, -1.0, 1e9]);
        queries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let levels: Vec<u8> = queries
            .iter()
            .map(|q| aggregation::apply_calibration(&table, *q).level.get())
            .collect();
        check(levels.windows(2).all(|w| w[0] <= w[1]), || format!("set {set}: levels not monotone"))?;
    }
    for n in [5, 17, 1000] {
        let table = aggregation::fit_calibration(&vec![4.0; n], "d").map_err(|e| e.to_string())?;
        let level = aggregation::apply_calibration(&table, 4.0).level.get();
        check(level == 3, || format!("all-equal n={n} maps to {level}"))?;
    }
    Ok(format!(
        "1000 multisets ({distinct_sets} distinct), max bin deviation {worst_dev:.1}, monotone, degenerate -> 3"
    ))
}

// 5 ----------------------------------------------------------------------

#[derive(Clone)]
enum Block {
    Good { tag: String, score: u8 },
    Missing,
    BadTag,
    BadScore,
}

fn write_rollout(tax: &Taxonomy, blocks: &[Block]) -> String {
    let mut out = String::new();
    for (dim, b) in tax.dimensions().iter().zip(blocks) {
        let (tag, score) = match b {
            Block::Good { tag, score } => (tag.clone(), score.to_string()),
            Block::Missing => continue,
            Block::BadTag => ("Martian".to_string(), "3".to_string()),
            Block::BadScore => (dim.tags[0].clone(), "7".to_string()),
        };
        out.push_str(&format!(
            "<box><dim>{}</dim><tag>{}</tag><score>{}</score><evidence>seen it</evidence></box>\n",
            dim.id,
            tag.replace('&', "&amp;"),
            score
        ));
    }
    out
}

fn random_blocks(tax: &Taxonomy, rng: &mut ChaCha8Rng, malformed_rate: f64) -> Vec<Block> {
    tax.dimensions()
        .iter()
        .map(|d| {
            if rng.gen_bool(malformed_rate) {
                match rng.gen_range(0..3) {
                    0 => Block::Missing,
                    1 => Block::BadTag,
                    _ => Block::BadScore,
                }
            } else {
                // Few candidate tags so rollouts agree often enough to matter.
                let pool = d.tags.len().min(3);
                Block::Good {
                    tag: d.tags[rng.gen_range(0..pool)].clone(),
                    score: rng.gen_range(1..=5),
                }
            }
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let tax = Taxonomy::builtin();
    let k = tax.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut malformed_seen = 0usize;
    let mut rewards_checked = 0usize;
    for batch in 0..500 {
        let n = rng.gen_range(1..=8);
        let plans: Vec<Vec<Block>> = (0..n).map(|_| random_blocks(&tax, &mut rng, 0.15)).collect();
        let texts: Vec<String> = plans.iter().map(|p| write_rollout(&tax, p)).collect();
        let levels = tax.ids().map(|id| (id.to_string(), lv(rng.gen_range(1..=5)))).collect();
        let reference = ReferenceConfidence::new("r", levels);

        for mode in [RewardMode::Frozen, RewardMode::SelfReported] {
            let out = reward::reward_batch("r", &texts, Some(&reference), mode, &tax).map_err(|e| e.to_string())?;
            for (plan, b) in plans.iter().zip(&out) {
                let sum: f64 = b.dimensions.iter().map(|d| d.reward).sum();
                check((-k..=k).contains(&b.total) && (sum - b.total).abs() < 1e-12, || {
                    format!("batch {batch}: total {} out of range or not the sum", b.total)
                })?;
                for (block, d) in plan.iter().zip(&b.dimensions) {
                    rewards_checked += 1;
                    check((-1.0..=1.0).contains(&d.reward), || format!("batch {batch}: reward {}", d.reward))?;
                    if !matches!(block, Block::Good { .. }) {
                        malformed_seen += 1;
                        check(d.reward == -1.0 && !d.well_formed, || {
                            format!("batch {batch}: malformed {} scored {}", d.dimension_id, d.reward)
                        })?;
                    }
                }
            }
        }

        // Same tags and format, different written confidences.
        let mutated: Vec<String> = plans
            .iter()
            .map(|p| {
                let p: Vec<Block> = p
                    .iter()
                    .map(|b| match b {
                        Block::Good { tag, .. } => Block::Good {
                            tag: tag.clone(),
                            score: rng.gen_range(1..=5),
                        },
                        other => other.clone(),
                    })
                    .collect();
                write_rollout(&tax, &p)
            })
            .collect();
        let before = reward::reward_batch("r", &texts, Some(&reference), RewardMode::Frozen, &tax).unwrap();
        let after = reward::reward_batch("r", &mutated, Some(&reference), RewardMode::Frozen, &tax).unwrap();
        check(before == after, || format!("batch {batch}: frozen rewards moved with written confidences"))?;
    }
    Ok(format!(
        "500 batches, {rewards_checked} dimension rewards in [-1,1], {malformed_seen} malformed at exactly -1, frozen mode confidence-invariant"
    ))
}

// 6 ----------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let tax = Taxonomy::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let n = rng.gen_range(1..=8);
        let mut plans: Vec<Vec<Block>> = (0..n).map(|_| random_blocks(&tax, &mut rng, 0.2)).collect();
        let broken = rng.gen_range(0..tax.len());
        for p in &mut plans {
            p[broken] = if rng.gen_bool(0.5) { Block::Missing } else { Block::BadTag };
        }
        let outcomes: Vec<_> = plans.iter().map(|p| parse_annotation(&write_rollout(&tax, p), &tax)).collect();
        let q = reward::quasi_gt("r", &outcomes, &tax).map_err(|e| e.to_string())?;

        let mut shuffled = outcomes.clone();
        shuffled.shuffle(&mut rng);
        let q2 = reward::quasi_gt("r", &shuffled, &tax).unwrap();
        check(q == q2, || format!("case {case}: rollout order changed the quasi ground truth"))?;

        let dim = &tax.dimensions()[broken];
        check(q.tags[&dim.id] == dim.na_tag, || format!("case {case}: all-malformed {} not NA", dim.id))?;

        let single = reward::quasi_gt("r", &outcomes[..1], &tax).unwrap();
        for (d, block) in tax.dimensions().iter().zip(&plans[0]) {
            let expected = match block {
                Block::Good { tag, .. } => tag.clone(),
                _ => d.na_tag.clone(),
            };
            check(single.tags[&d.id] == expected, || format!("case {case}: single rollout {} differs", d.id))?;
        }
    }
    Ok("1000 cases: permutation-invariant, all-malformed -> NA, single rollout identity".into())
}

// 7 ----------------------------------------------------------------------

struct PipelineRun {
    weighted: metrics::EvalReport,
    pooled_single: metrics::EvalReport,
    first_sample: metrics::EvalReport,
    sweep: Vec<metrics::EvalReport>,
    serialized: String,
}

fn to_predictions(results: &BTreeMap<String, BTreeMap<String, AggregatedDimension>>) -> Predictions {
    results
        .iter()
        .map(|(id, dims)| {
            (
                id.clone(),
                dims.iter()
                    .map(|(d, a)| (d.clone(), LeveledTag::new(a.vote.voted_tag.clone(), a.confidence.level)))
                    .collect(),
            )
        })
        .collect()
}

fn pipeline(tax: &Taxonomy, corpus: &Corpus) -> Result<PipelineRun, String> {
    let sampling = SamplingConfig {
        m_samples: 10,
        seed: 7,
        max_parallel: 8,
        ..SamplingConfig::default()
    };
    let backend = MockBackend::new(tax.clone(), 7, MockSettings { fidelity: 0.9, malformed_rate: 0.0 });
    let samples = sample_corpus(&backend, &sampling, &PromptTemplate::default(), &corpus.records, tax, &NullSink)
        .map_err(|e| e.to_string())?;
    let sets: Vec<Vec<AnnotationSet>> = samples
        .iter()
        .map(|group| group.iter().map(|s| s.outcome.clone().into_partial(&s.record_id, s.sample_index)).collect())
        .collect();

    let aggregate = |strategy| -> Result<BTreeMap<String, BTreeMap<String, AggregatedDimension>>, String> {
        sets.iter()
            .map(|g| {
                aggregation::aggregate_record(g, tax, strategy, None)
                    .map(|a| (g[0].record_id.clone(), a))
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let mut weighted = aggregate(Strategy::ConfidenceWeighted)?;
    let first = aggregate(Strategy::SingleSample)?;
    let tau = ConfidenceLevel::MIN;
    let weighted_report = metrics::evaluate(&to_predictions(&weighted), corpus, tax, tau).map_err(|e| e.to_string())?;
    let first_report = metrics::evaluate(&to_predictions(&first), corpus, tax, tau).map_err(|e| e.to_string())?;

    let per_sample: Vec<Predictions> = (0..10)
        .map(|i| {
            sets.iter()
                .map(|g| {
                    let s = &g[i];
                    (
                        s.record_id.clone(),
                        s.annotations
                            .iter()
                            .map(|(d, a)| (d.clone(), LeveledTag::new(a.tag.clone(), a.confidence)))
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    let pooled = metrics::evaluate_pooled(&per_sample, corpus, tax, tau).map_err(|e| e.to_string())?;

    let tables = aggregation::fit_tables(weighted.values(), tax).map_err(|e| e.to_string())?;
    for r in weighted.values_mut() {
        aggregation::recalibrate(r, &tables);
    }
    let sweep = metrics::sweep(&to_predictions(&weighted), corpus, tax).map_err(|e| e.to_string())?;
    let serialized = format!(
        "{}\n{}\n{}",
        weighted_report.to_json(),
        pooled.to_json(),
        metrics::sweep_csv(&sweep)
    );
    Ok(PipelineRun {
        weighted: weighted_report,
        pooled_single: pooled,
        first_sample: first_report,
        sweep,
        serialized,
    })
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let tax = Taxonomy::builtin();
    let corpus = generate_synthetic_corpus(&tax, 1000, 0.3, 7);
    let a = pipeline(&tax, &corpus)?;
    let b = pipeline(&tax, &corpus)?;

    let w = a.weighted.macro_average.f1 * 100.0;
    let pooled = a.pooled_single.macro_average.f1 * 100.0;
    let first = a.first_sample.macro_average.f1 * 100.0;
    check(w - pooled >= 1.0, || format!("weighted {w:.2} vs pooled single-sample {pooled:.2}"))?;
    check(w - first >= 1.0, || format!("weighted {w:.2} vs first-sample {first:.2}"))?;

    for dim in tax.dimensions() {
        let recalls: Vec<f64> = a.sweep.iter().map(|r| r.dimension(&dim.id).unwrap().recall).collect();
        check(recalls.windows(2).all(|x| x[1] <= x[0]), || format!("{} recall {recalls:?}", dim.id))?;
    }
    check(a.serialized == b.serialized, || "reports differ between runs".into())?;
    Ok(format!(
        "macro F1 weighted {w:.2} vs single-sample {pooled:.2} (first sample only {first:.2}); recall monotone; identical reruns; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

// 8 ----------------------------------------------------------------------

/// Keep counts with integer masses (thousandths): the binding bin is the one
/// minimising n_b / m_b, compared by cross-multiplication.
fn oracle_keep(counts: [u64; 5], mass: [u64; 5]) -> [u64; 5] {
    let binding = (0..5)
        .filter(|&b| mass[b] > 0)
        .fold(None::<usize>, |best, b| match best {
            Some(a) if counts[a] * mass[b] <= counts[b] * mass[a] => Some(a),
            _ => Some(b),
        })
        .unwrap();
    [0, 1, 2, 3, 4].map(|b| (counts[binding] * mass[b] / mass[binding]).min(counts[b]))
}

fn profiles(counts: [u64; 5], rng: &mut ChaCha8Rng) -> Vec<DifficultyProfile> {
    let mut out = Vec::new();
    for (b, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            out.push(DifficultyProfile {
                record_id: format!("r{:06}", out.len()),
                level: lv(b as i64 + 1),
            });
        }
    }
    out.shuffle(rng);
    out
}

fn histogram(ids: &[String], profiles: &[DifficultyProfile]) -> [u64; 5] {
    let level: BTreeMap<&str, u8> = profiles.iter().map(|p| (p.record_id.as_str(), p.level.get())).collect();
    let mut h = [0u64; 5];
    for id in ids {
        h[usize::from(level[id.as_str()]) - 1] += 1;
    }
    h
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let uniform = profiles([200; 5], &mut rng);
    let (ids, report) = filter_with_report(&uniform, &ShapeSpec::named(ShapeName::Vee), 1).map_err(|e| e.to_string())?;
    let kept = histogram(&ids, &uniform);
    let oracle = oracle_keep([200; 5], [300, 150, 100, 150, 300]);
    check(kept == [200, 100, 66, 100, 200] && kept == oracle, || format!("vee kept {kept:?}, oracle {oracle:?}"))?;
    check((report.lambda - 2.0 / 3.0).abs() < 1e-12, || format!("lambda {}", report.lambda))?;

    let named = [ShapeName::Uniform, ShapeName::Vee, ShapeName::Wedge, ShapeName::MShape];
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let counts = [0; 5].map(|_: u64| if rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..400) });
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let milli: [u64; 5] = if case % 2 == 0 {
            named[case / 2 % 4].default_mass().map(|m| (m * 1000.0).round() as u64)
        } else {
            let mut cuts = [rng.gen_range(0..=1000), rng.gen_range(0..=1000), rng.gen_range(0..=1000), rng.gen_range(0..=1000)];
            cuts.sort();
            [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], cuts[3] - cuts[2], 1000 - cuts[3]]
        };
        let spec = ShapeSpec::new(ShapeName::Uniform, milli.map(|m| m as f64 / 1000.0)).map_err(|e| e.to_string())?;
        let input = profiles(counts, &mut rng);
        let (ids, report) = filter_with_report(&input, &spec, case as u64).map_err(|e| e.to_string())?;
        let h = histogram(&ids, &input);
        let mut uniq = ids.clone();
        uniq.dedup();
        check(uniq.len() == ids.len(), || format!("case {case}: duplicate ids"))?;
        let total = input.len() as f64;
        for b in 0..5 {
            let ideal = report.lambda * spec.target_mass[b] * total;
            worst = worst.max((h[b] as f64 - ideal).abs());
            check(h[b] <= counts[b] && (h[b] as f64 - ideal).abs() <= 1.0 + 1e-9, || {
                format!("case {case}: bin {b} kept {} of {}, ideal {ideal:.3}", h[b], counts[b])
            })?;
        }
        let oracle = oracle_keep(counts, milli);
        check(h == oracle, || format!("case {case}: kept {h:?}, oracle {oracle:?}"))?;
    }
    Ok(format!("vee example {kept:?}, lambda 2/3; 200 random inputs match the oracle, max deviation {worst:.3}"))
}

// 9 ----------------------------------------------------------------------

const EVIDENCE_CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', ' ', '\t', '\n', '<', '>', '&', ';', '/', '"', '\'', 'é', '中', '–', '🙂',
];

fn random_evidence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..40);
    let mut s: String = (0..len).map(|_| *EVIDENCE_CHARS.choose(rng).unwrap()).collect();
    if rng.gen_bool(0.1) {
        s.push_str("</evidence></box><box>&amp;");
    }
    s
}

fn random_set(tax: &Taxonomy, rng: &mut ChaCha8Rng, index: usize) -> AnnotationSet {
    let anns = tax.dimensions().iter().map(|d| {
        let tag = d.tags.choose(rng).unwrap().clone();
        let evidence = if d.is_na(&tag) && rng.gen_bool(0.5) { String::new() } else { random_evidence(rng) };
        DimensionAnnotation::new(d.id.clone(), tag, lv(rng.gen_range(1..=5)), evidence)
    });
    AnnotationSet::new("r", index, anns, tax).unwrap()
}

const FRAGMENTS: &[&[u8]] = &[
    b"<box>", b"</box>", b"<dim>", b"</dim>", b"<tag>", b"</tag>", b"<score>", b"</score>",
    b"<evidence>", b"</evidence>", b"&amp;", b"&lt;", b"&", b"<", b">", b"gender", b"very high",
    b"Unknown(NA)", b"\xff\xfe", b"\xe2\x80", b"\n", b"6", b"-1", b"99999999999999999999",
];

fn mutate(base: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut v = base.to_vec();
    for _ in 0..rng.gen_range(1..=8) {
        let len = v.len();
        match rng.gen_range(0..6) {
            0 if len > 0 => {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(a..=len.min(a + 40));
                v.drain(a..b);
            }
            1 => {
                let at = rng.gen_range(0..=len);
                let frag = FRAGMENTS.choose(rng).unwrap();
                v.splice(at..at, frag.iter().copied());
            }
            2 if len > 0 => {
                let at = rng.gen_range(0..len);
                v[at] = rng.gen();
            }
            3 if len > 0 => {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(a..=len.min(a + 80));
                let chunk: Vec<u8> = v[a..b].to_vec();
                let at = rng.gen_range(0..=len);
                v.splice(at..at, chunk);
            }
            4 => v.truncate(rng.gen_range(0..=len)),
            _ => {
                let at = rng.gen_range(0..=len);
                let noise: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
                v.splice(at..at, noise);
            }
        }
    }
    v
}

fn criterion_9() -> Outcome {
    let tax = Taxonomy::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bases: Vec<Vec<u8>> = (0..200).map(|i| render_annotation(&random_set(&tax, &mut rng, i), &tax).into_bytes()).collect();
    let mut crashes = 0usize;
    let mut fully_parsed = 0usize;
    for i in 0..100_000 {
        let text = mutate(&bases[i % bases.len()], &mut rng);
        match catch_unwind(AssertUnwindSafe(|| parse_annotation_bytes(&text, &tax))) {
            Ok(outcome) => {
                check(outcome.outputs.len() == tax.len(), || format!("fuzz {i}: wrong output count"))?;
                for o in &outcome.outputs {
                    if let Some(a) = &o.annotation {
                        let dim = tax.dimension(&o.dimension_id).unwrap();
                        check(dim.validate_tag(&a.tag), || format!("fuzz {i}: invalid tag accepted"))?;
                    }
                }
                if outcome.is_complete() {
                    fully_parsed += 1;
                }
            }
            Err(_) => crashes += 1,
        }
    }
    check(crashes == 0, || format!("{crashes} parser panics"))?;

    for i in 0..10_000 {
        let set = random_set(&tax, &mut rng, i);
        let back = parse_annotation(&render_annotation(&set, &tax), &tax)
            .into_result("r", i)
            .map_err(|_| format!("round trip {i}: incomplete parse"))?;
        check(back == set, || format!("round trip {i}: {set:?} came back as {back:?}"))?;
    }
    Ok(format!("100000 mutated texts, 0 panics ({fully_parsed} still complete); 10000 render/parse round trips exact"))
}

// ------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric arithmetic matches the threshold table", criterion_1),
        ("confidence weights are c/5", criterion_2),
        ("voting equals the brute-force oracle", criterion_3),
        ("calibration balances mass", criterion_4),
        ("reward bounds and frozen-mode invariance", criterion_5),
        ("quasi ground truth properties", criterion_6),
        ("end-to-end mock pipeline", criterion_7),
        ("filter water-filling arithmetic", criterion_8),
        ("parser robustness", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
