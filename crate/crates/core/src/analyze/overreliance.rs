//! Human accuracy by assistance condition, split by whether the AI was right.
//!
//! Differences are tested at the observation level with label-shuffle
//! permutations and percentile bootstraps over raw observations, in place of
//! mixed-effects models with participant and item intercepts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::{accuracy, bootstrap_ci, bootstrap_diff_ci, permutation_test};
use crate::corpus::Condition;
use crate::error::Result;

pub const METHOD_NOTE: &str = "observation-level permutation tests and percentile bootstrap over raw \
observations (substitute for mixed-effects models with random intercepts)";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplingOptions {
    pub bootstrap_resamples: usize,
    pub permutations: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for ResamplingOptions {
    fn default() -> Self {
        ResamplingOptions {
            bootstrap_resamples: 10_000,
            permutations: 10_000,
            seed: 42,
            level: 0.95,
        }
    }
}

/// One human answer on a subset item under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanObservation {
    pub item_id: String,
    pub condition: Condition,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrelianceCell {
    pub ai_correct: bool,
    pub condition: Condition,
    pub observations: usize,
    pub items: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrelianceComparison {
    pub ai_correct: bool,
    pub condition: Condition,
    pub reference: Condition,
    pub diff: f64,
    pub ci: (f64, f64),
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrelianceReport {
    pub method: String,
    pub options: ResamplingOptions,
    pub cells: Vec<OverrelianceCell>,
    pub comparisons: Vec<OverrelianceComparison>,
}

/// `ai_correct` maps each subset item to the AI's correctness; observations
/// on other items are ignored. Every non-baseline condition is compared with
/// baseline inside each AI-correctness group.
pub fn overreliance_report(
    ai_correct: &BTreeMap<String, bool>,
    observations: &[HumanObservation],
    options: ResamplingOptions,
) -> Result<OverrelianceReport> {
    // (AI correct, condition) -> (outcomes, distinct items)
    type Cell<'a> = (Vec<bool>, BTreeSet<&'a str>);
    let mut groups: BTreeMap<(bool, Condition), Cell> = BTreeMap::new();
    for o in observations {
        if let Some(&ai) = ai_correct.get(&o.item_id) {
            let g = groups.entry((ai, o.condition)).or_default();
            g.0.push(o.correct);
            g.1.insert(&o.item_id);
        }
    }
    let mut cells = Vec::new();
    let mut comparisons = Vec::new();
    // each cell and comparison draws from its own seed so adding a condition
    // leaves the others unchanged
    let seed_for = |ai: bool, c: Condition, other: u64| {
        options.seed ^ ((ai as u64) << 40 | (c as u64) << 32 | other)
    };
    for ai in [true, false] {
        for condition in Condition::ALL {
            let (obs, items) = groups.get(&(ai, condition)).cloned().unwrap_or_default();
            let ci = if obs.is_empty() {
                None
            } else {
                Some(bootstrap_ci(
                    &obs,
                    options.bootstrap_resamples,
                    seed_for(ai, condition, 0),
                    options.level,
                )?)
            };
            cells.push(OverrelianceCell {
                ai_correct: ai,
                condition,
                observations: obs.len(),
                items: items.len(),
                correct: obs.iter().filter(|&&b| b).count(),
                accuracy: (!obs.is_empty()).then(|| accuracy(&obs)),
                ci,
            });
        }
        let Some((base, _)) = groups.get(&(ai, Condition::Baseline)) else { continue };
        for condition in [Condition::Top2, Condition::Delegation] {
            let Some((obs, _)) = groups.get(&(ai, condition)) else { continue };
            comparisons.push(OverrelianceComparison {
                ai_correct: ai,
                condition,
                reference: Condition::Baseline,
                diff: accuracy(obs) - accuracy(base),
                ci: bootstrap_diff_ci(
                    obs,
                    base,
                    options.bootstrap_resamples,
                    seed_for(ai, condition, 1),
                    options.level,
                )?,
                p: permutation_test(obs, base, options.permutations, seed_for(ai, condition, 2))?,
            });
        }
    }
    Ok(OverrelianceReport {
        method: METHOD_NOTE.to_string(),
        options,
        cells,
        comparisons,
    })
}
