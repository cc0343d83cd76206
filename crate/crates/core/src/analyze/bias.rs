//! Option-1 selection rate on one dataset against the other multiple-choice
//! datasets.

use serde::{Deserialize, Serialize};

use super::stats::{two_proportion_ztest, ZTest};
use crate::corpus::{AnswerKind, CanonicalAnswer, ItemSet, ResponseSet, Side};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalBias {
    pub target: String,
    pub target_option_one: u64,
    pub target_n: u64,
    pub other_option_one: u64,
    pub other_n: u64,
    pub test: Option<ZTest>,
}

impl PositionalBias {
    pub fn target_rate(&self) -> f64 {
        self.target_option_one as f64 / self.target_n as f64
    }

    pub fn other_rate(&self) -> f64 {
        self.other_option_one as f64 / self.other_n as f64
    }
}

fn key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Counts human answers resolving to option 1 on multiple-choice items of
/// datasets whose name starts with `target` (case and punctuation ignored)
/// versus all other multiple-choice datasets. The test is absent when either
/// side has no responses.
pub fn option_one_bias(items: &ItemSet, responses: &ResponseSet, target: &str) -> Result<PositionalBias> {
    let target_key = key(target);
    let (mut tk, mut tn, mut ok, mut on) = (0u64, 0u64, 0u64, 0u64);
    for r in responses.iter() {
        if !matches!(r.side, Side::Human { .. }) {
            continue;
        }
        let Some(item) = items.get(&r.item_id) else { continue };
        if !matches!(item.kind, AnswerKind::MultipleChoice { .. }) {
            continue;
        }
        let one = (r.canonical == CanonicalAnswer::Option(1)) as u64;
        if key(&item.dataset).starts_with(&target_key) {
            tk += one;
            tn += 1;
        } else {
            ok += one;
            on += 1;
        }
    }
    let test = if tn > 0 && on > 0 {
        Some(two_proportion_ztest(tk, tn, ok, on)?)
    } else {
        None
    };
    Ok(PositionalBias {
        target: target.to_string(),
        target_option_one: tk,
        target_n: tn,
        other_option_one: ok,
        other_n: on,
        test,
    })
}
