//! Deterministic synthetic corpora for demos, tests and the bundled fixture.
//!
//! Each item gets a latent difficulty. AI samples and human raters answer
//! correctly with skill-dependent probabilities and report confidences that
//! track correctness loosely, so calibration and routing have something to
//! find. Top-2 assisted raters gain accuracy only when the AI majority is
//! right, which plants an overreliance pattern.

use std::path::Path;

use crate::analyze::delegation::{write_decompositions, DelegationRecord, Subtask};
use crate::corpus::{
    canonicalize_or_flag, write_items, write_responses, AnswerKind, CanonicalAnswer, Condition, GroupMap, Item,
    ItemSet, Response, ResponseSet, Side,
};
use crate::error::Result;
use crate::rng::{self, Pcg64};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub items: usize,
    /// `Some(n)` for n-option multiple choice, `None` for free text.
    pub options: Option<u32>,
    pub ai_skill: f64,
    pub human_skill: f64,
}

impl SynthDataset {
    pub fn new(name: &str, items: usize, options: Option<u32>, ai_skill: f64, human_skill: f64) -> Self {
        SynthDataset {
            name: name.to_string(),
            items,
            options,
            ai_skill,
            human_skill,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub datasets: Vec<SynthDataset>,
    pub ai_samples: u32,
    /// Baseline raters per item; more than the cap exercises capping.
    pub baseline_raters: usize,
    /// Raters per item under each assisted condition.
    pub assisted_raters: usize,
    pub participant_pool: usize,
    pub seed: u64,
}

impl SynthOptions {
    /// The 40-item corpus shipped as the bundled fixture.
    pub fn fixture() -> Self {
        SynthOptions {
            datasets: vec![
                SynthDataset::new("QuALITY", 10, Some(4), 0.75, 0.55),
                SynthDataset::new("GPQA", 8, Some(4), 0.6, 0.35),
                SynthDataset::new("SimpleQA", 10, None, 0.55, 0.45),
                SynthDataset::new("Hidden Agenda", 6, Some(2), 0.55, 0.65),
                SynthDataset::new("Web of Lies", 6, Some(2), 0.6, 0.6),
            ],
            ai_samples: 5,
            baseline_raters: 4,
            assisted_raters: 3,
            participant_pool: 24,
            seed: 7,
        }
    }

    /// A larger corpus with the same shape.
    pub fn scaled(factor: usize) -> Self {
        let mut o = Self::fixture();
        for d in &mut o.datasets {
            d.items *= factor;
        }
        o.participant_pool *= factor;
        o
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub items: ItemSet,
    pub responses: ResponseSet,
    pub decompositions: Vec<DelegationRecord>,
}

impl SynthCorpus {
    /// Writes `items.jsonl`, `responses.jsonl` and `decompositions.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        write_items(&dir.join("items.jsonl"), &self.items)?;
        write_responses(&dir.join("responses.jsonl"), &self.responses)?;
        write_decompositions(&dir.join("decompositions.jsonl"), &self.decompositions)
    }
}

fn bernoulli(rng: &mut Pcg64, p: f64) -> bool {
    rng::unit(rng) < p
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// A raw answer string: the gold or a wrong one, written in one of the forms
/// real raters use.
fn answer(rng: &mut Pcg64, item: &Item, correct: bool) -> String {
    match (&item.kind, &item.gold) {
        (AnswerKind::MultipleChoice { option_count }, CanonicalAnswer::Option(g)) => {
            let pick = if correct {
                *g
            } else {
                let wrong = 1 + rng::below(rng, *option_count as usize - 1) as u32;
                if wrong >= *g {
                    wrong + 1
                } else {
                    wrong
                }
            };
            match rng::below(rng, 3) {
                0 => format!("Option {pick}"),
                1 => pick.to_string(),
                _ => item.options[pick as usize - 1].clone(),
            }
        }
        (_, CanonicalAnswer::NormalizedText(gold)) => {
            let text = if correct {
                gold.clone()
            } else {
                // two distractors per item so wrong answers cluster
                format!("{gold} alt{}", rng::below(rng, 2))
            };
            match rng::below(rng, 3) {
                0 => text,
                1 => format!("  {}. ", text.to_uppercase()),
                _ => format!("{text}!"),
            }
        }
        _ => unreachable!("synthetic items have resolvable golds"),
    }
}

/// Overconfident and only loosely informative: wrong answers still average
/// well above one half.
fn confidence(rng: &mut Pcg64, correct: bool, sharpness: f64) -> f64 {
    let base = if correct { 0.72 + 0.15 * sharpness } else { 0.72 - 0.15 * sharpness };
    (base + 0.5 * (rng::unit(rng) - 0.5)).clamp(0.0, 1.0)
}

pub fn generate(options: &SynthOptions) -> Result<SynthCorpus> {
    let groups = GroupMap::default();
    let mut items = Vec::new();
    let mut responses = Vec::new();
    let mut decompositions = Vec::new();
    for d in &options.datasets {
        for i in 0..d.items {
            let item_id = format!("{}-{i:03}", d.name.to_lowercase().replace(' ', "_"));
            let mut rng = rng::stream(options.seed, item_id.as_bytes());
            let (kind, opts, gold) = match d.options {
                Some(n) => (
                    AnswerKind::MultipleChoice { option_count: n },
                    (1..=n).map(|k| format!("choice {k} of {item_id}")).collect(),
                    CanonicalAnswer::Option(1 + rng::below(&mut rng, n as usize) as u32),
                ),
                None => {
                    let gold = if i % 3 == 0 {
                        format!("{}.50", i + 1)
                    } else {
                        format!("answer {i}")
                    };
                    (AnswerKind::FreeText, Vec::new(), CanonicalAnswer::NormalizedText(crate::corpus::normalize_text(&gold)))
                }
            };
            let item = Item {
                item_id: item_id.clone(),
                dataset: d.name.clone(),
                group: groups.resolve(&d.name),
                kind,
                options: opts,
                gold,
                context_ref: None,
            };
            let difficulty = rng::unit(&mut rng);
            let p_ai = (d.ai_skill + 0.6 * (0.5 - difficulty)).clamp(0.05, 0.97);
            let sharp = 0.3 + 0.7 * rng::unit(&mut rng);
            // shared by every sample, so averaging does not wash it out
            let offset = 0.4 * (rng::unit(&mut rng) - 0.5);
            let mut ai_majority_right = 0usize;
            for s in 0..options.ai_samples {
                let correct = bernoulli(&mut rng, p_ai);
                ai_majority_right += correct as usize;
                let raw = answer(&mut rng, &item, correct);
                let conf = round2((confidence(&mut rng, correct, sharp) + offset).clamp(0.0, 1.0));
                responses.push(Response {
                    item_id: item_id.clone(),
                    side: Side::Ai { sample_index: s },
                    canonical: canonicalize_or_flag(&raw, &item),
                    raw_answer: raw,
                    confidence: conf,
                    reported_confidence: conf,
                });
            }
            let ai_right = 2 * ai_majority_right > options.ai_samples as usize;
            let human_difficulty = 0.5 * difficulty + 0.5 * rng::unit(&mut rng);
            let p_h = (d.human_skill + 0.6 * (0.5 - human_difficulty)).clamp(0.05, 0.97);
            let mut push_raters = |rng: &mut Pcg64, condition: Condition, count: usize, p: f64| {
                let mut pool: Vec<usize> = (0..options.participant_pool).collect();
                rng::partial_shuffle(rng, &mut pool, count);
                for &pid in &pool[..count.min(pool.len())] {
                    let correct = bernoulli(rng, p);
                    let raw = answer(rng, &item, correct);
                    let conf = (confidence(rng, correct, 0.5) * 100.0).round();
                    responses.push(Response {
                        item_id: item_id.clone(),
                        side: Side::Human {
                            condition,
                            participant_id: format!("p{pid:03}"),
                        },
                        canonical: canonicalize_or_flag(&raw, &item),
                        raw_answer: raw,
                        confidence: conf / 100.0,
                        reported_confidence: conf,
                    });
                }
            };
            push_raters(&mut rng, Condition::Baseline, options.baseline_raters, p_h);
            let top2 = if ai_right { (p_h + 0.3).min(0.97) } else { (p_h - 0.05).max(0.03) };
            push_raters(&mut rng, Condition::Top2, options.assisted_raters, top2);
            push_raters(&mut rng, Condition::Delegation, options.assisted_raters, p_h);

            let n_sub = 3 + rng::below(&mut rng, 8);
            let subtasks = (0..n_sub)
                .map(|k| {
                    let c = round2(0.3 + 0.7 * rng::unit(&mut rng));
                    Subtask {
                        text_ref: format!("{item_id}/s{k}"),
                        ai_confidence: c,
                        routed_to_human: c < 0.8,
                        human_answer_present: c < 0.8,
                    }
                })
                .collect();
            decompositions.push(DelegationRecord {
                item_id: item_id.clone(),
                dataset: Some(d.name.clone()),
                subtasks,
            });
            items.push(item);
        }
    }
    Ok(SynthCorpus {
        items: ItemSet::new(items)?,
        responses: ResponseSet::new(responses),
        decompositions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let c = generate(&SynthOptions::fixture()).unwrap();
        assert_eq!(c.items.len(), 40);
        assert_eq!(c.items.groups().len(), 4);
        assert!(c.responses.iter().all(|r| r.canonical.is_resolved()));
        assert_eq!(c, generate(&SynthOptions::fixture()).unwrap());
    }

    #[test]
    fn written_corpus_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&SynthOptions::fixture()).unwrap();
        c.write(dir.path()).unwrap();
        let items = crate::corpus::load_items(&dir.path().join("items.jsonl")).unwrap();
        let responses = crate::corpus::load_responses(&dir.path().join("responses.jsonl"), &items).unwrap();
        assert_eq!(items, c.items);
        assert_eq!(responses, c.responses);
    }
}
