//! Where human and AI errors differ, and how much of that a router captures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::route::{AccuracyReport, PairedItem};

/// Per-item correctness of both sides plus the AI confidence used for routing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub item_id: String,
    pub dataset: String,
    pub ai_correct: bool,
    pub human_correct: bool,
    pub ai_conf: f64,
}

/// Majority-vote outcomes; every item needs a human majority judgment.
pub fn outcomes(items: &[PairedItem]) -> Result<Vec<Outcome>> {
    items
        .iter()
        .map(|p| {
            let human = p.human_majority.as_ref().ok_or_else(|| Error::MissingSide {
                item_id: p.item_id.clone(),
                side: "human majority",
            })?;
            Ok(Outcome {
                item_id: p.item_id.clone(),
                dataset: p.dataset.clone(),
                ai_correct: p.ai.correct,
                human_correct: human.correct,
                ai_conf: p.ai.confidence(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub both_correct: usize,
    pub ai_only: usize,
    pub human_only: usize,
    pub neither: usize,
}

impl QuadrantCounts {
    pub fn total(&self) -> usize {
        self.both_correct + self.ai_only + self.human_only + self.neither
    }

    fn pct(&self, count: usize) -> f64 {
        100.0 * count as f64 / self.total() as f64
    }

    /// Percentages in the order both, AI-only, human-only, neither.
    pub fn percentages(&self) -> [f64; 4] {
        [
            self.pct(self.both_correct),
            self.pct(self.ai_only),
            self.pct(self.human_only),
            self.pct(self.neither),
        ]
    }

    pub fn ai_correct(&self) -> usize {
        self.both_correct + self.ai_only
    }

    pub fn human_correct(&self) -> usize {
        self.both_correct + self.human_only
    }

    pub fn oracle_correct(&self) -> usize {
        self.total() - self.neither
    }

    fn add(&mut self, ai: bool, human: bool) {
        match (ai, human) {
            (true, true) => self.both_correct += 1,
            (true, false) => self.ai_only += 1,
            (false, true) => self.human_only += 1,
            (false, false) => self.neither += 1,
        }
    }
}

pub fn agreement_quadrants(outcomes: &[Outcome]) -> QuadrantCounts {
    let mut q = QuadrantCounts::default();
    for o in outcomes {
        q.add(o.ai_correct, o.human_correct);
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub dataset: String,
    pub n: usize,
    pub human_correct: usize,
    pub ai_correct: usize,
    pub oracle_correct: usize,
    pub hybrid_correct: Option<usize>,
}

impl OracleRow {
    fn frac(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    pub fn human_accuracy(&self) -> f64 {
        self.frac(self.human_correct)
    }

    pub fn ai_accuracy(&self) -> f64 {
        self.frac(self.ai_correct)
    }

    pub fn oracle_accuracy(&self) -> f64 {
        self.frac(self.oracle_correct)
    }

    pub fn hybrid_accuracy(&self) -> Option<f64> {
        self.hybrid_correct.map(|k| self.frac(k))
    }

    /// Oracle minus AI accuracy.
    pub fn headroom(&self) -> f64 {
        self.frac(self.oracle_correct - self.ai_correct)
    }

    /// Hybrid minus AI accuracy.
    pub fn captured(&self) -> Option<f64> {
        self.hybrid_correct
            .map(|h| (h as f64 - self.ai_correct as f64) / self.n as f64)
    }

    /// Captured over headroom; absent when there is no headroom.
    pub fn capture_rate(&self) -> Option<f64> {
        let headroom = self.oracle_correct - self.ai_correct;
        match (self.hybrid_correct, headroom) {
            (Some(h), d) if d > 0 => Some((h as f64 - self.ai_correct as f64) / d as f64),
            _ => None,
        }
    }
}

/// Mean AI confidence per agreement category; `None` for empty categories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceByCategory {
    pub both_correct: Option<f64>,
    pub ai_only: Option<f64>,
    pub human_only: Option<f64>,
    pub neither: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub overall: OracleRow,
    pub per_dataset: Vec<OracleRow>,
    pub quadrants: QuadrantCounts,
    pub confidence_by_category: ConfidenceByCategory,
}

fn row(dataset: &str, outcomes: &[&Outcome], hybrid_correct: Option<usize>) -> OracleRow {
    OracleRow {
        dataset: dataset.to_string(),
        n: outcomes.len(),
        human_correct: outcomes.iter().filter(|o| o.human_correct).count(),
        ai_correct: outcomes.iter().filter(|o| o.ai_correct).count(),
        oracle_correct: outcomes.iter().filter(|o| o.ai_correct || o.human_correct).count(),
        hybrid_correct,
    }
}

/// Oracle upper bound (an item counts if either side is right), with the
/// hybrid's captured share of the headroom when a majority report is given.
pub fn oracle_bound(outcomes: &[Outcome], hybrid: Option<&AccuracyReport>) -> Result<OracleReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("oracle bound over zero items".into()));
    }
    let hybrid_correct = |dataset: Option<&str>, n: usize| -> Result<Option<usize>> {
        let Some(report) = hybrid else { return Ok(None) };
        let row = match dataset {
            None => Some(&report.overall),
            Some(d) => report.dataset(d),
        };
        match row {
            Some(r) if r.n == n => Ok(Some(r.correct)),
            Some(r) => Err(Error::Invariant(format!(
                "hybrid report covers {} observations of {}, oracle has {n}",
                r.n,
                dataset.unwrap_or("all datasets")
            ))),
            None => Err(Error::Invariant(format!(
                "hybrid report has no row for {}",
                dataset.unwrap_or("overall")
            ))),
        }
    };
    let mut by_dataset: BTreeMap<&str, Vec<&Outcome>> = BTreeMap::new();
    for o in outcomes {
        by_dataset.entry(o.dataset.as_str()).or_default().push(o);
    }
    let per_dataset = by_dataset
        .iter()
        .map(|(d, os)| Ok(row(d, os, hybrid_correct(Some(d), os.len())?)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&Outcome> = outcomes.iter().collect();
    let overall = row("Overall", &all, hybrid_correct(None, all.len())?);

    let mean_conf = |ai: bool, human: bool| {
        let confs: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.ai_correct == ai && o.human_correct == human)
            .map(|o| o.ai_conf)
            .collect();
        (!confs.is_empty()).then(|| confs.iter().sum::<f64>() / confs.len() as f64)
    };
    Ok(OracleReport {
        overall,
        per_dataset,
        quadrants: agreement_quadrants(outcomes),
        confidence_by_category: ConfidenceByCategory {
            both_correct: mean_conf(true, true),
            ai_only: mean_conf(true, false),
            human_only: mean_conf(false, true),
            neither: mean_conf(false, false),
        },
    })
}

/// Per-dataset share of items to flag as low-confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetFractions {
    pub default: f64,
    #[serde(default)]
    pub per_dataset: BTreeMap<String, f64>,
}

impl Default for SubsetFractions {
    fn default() -> Self {
        SubsetFractions {
            default: 0.10,
            per_dataset: BTreeMap::from([("Big-Bench".to_string(), 0.20)]),
        }
    }
}

fn loose_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl SubsetFractions {
    /// Exact dataset name first, then a case/punctuation-insensitive match.
    pub fn fraction_for(&self, dataset: &str) -> f64 {
        if let Some(&f) = self.per_dataset.get(dataset) {
            return f;
        }
        let key = loose_key(dataset);
        self.per_dataset
            .iter()
            .find(|(name, _)| loose_key(name) == key)
            .map_or(self.default, |(_, &f)| f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = std::iter::once(&self.default)
            .chain(self.per_dataset.values())
            .find(|&&f| !(f > 0.0 && f <= 1.0));
        match bad {
            Some(f) => Err(Error::Config(format!("subset fraction {f} outside (0,1]"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetCandidate {
    pub item_id: String,
    pub dataset: String,
    pub confidence: f64,
}

/// Number of items taken from a dataset of `n`: `ceil(fraction * n)`.
pub fn subset_count(fraction: f64, n: usize) -> usize {
    // the small slack keeps e.g. 0.1 * 30 = 3.0000000000000004 at 3
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Lowest-confidence items per dataset (ties broken by item_id).
pub fn select_low_confidence_subset(candidates: &[SubsetCandidate], fractions: &SubsetFractions) -> BTreeSet<String> {
    let mut by_dataset: BTreeMap<&str, Vec<&SubsetCandidate>> = BTreeMap::new();
    for c in candidates {
        by_dataset.entry(c.dataset.as_str()).or_default().push(c);
    }
    let mut out = BTreeSet::new();
    for (dataset, mut list) in by_dataset {
        list.sort_by(|a, b| {
            a.confidence
                .total_cmp(&b.confidence)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        let k = subset_count(fractions.fraction_for(dataset), list.len());
        out.extend(list[..k].iter().map(|c| c.item_id.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: usize, dataset: &str, ai: bool, human: bool) -> Outcome {
        Outcome {
            item_id: format!("i{id:04}"),
            dataset: dataset.into(),
            ai_correct: ai,
            human_correct: human,
            ai_conf: 0.5,
        }
    }

    #[test]
    fn quadrant_enumeration() {
        let v = vec![
            outcome(0, "d", true, true),
            outcome(1, "d", true, false),
            outcome(2, "d", false, true),
            outcome(3, "d", false, false),
        ];
        let q = agreement_quadrants(&v);
        assert_eq!((q.both_correct, q.ai_only, q.human_only, q.neither), (1, 1, 1, 1));
        assert_eq!(q.percentages(), [25.0; 4]);
        let all: Vec<_> = (0..7).map(|i| outcome(i, "d", true, true)).collect();
        assert_eq!(agreement_quadrants(&all).both_correct, 7);
    }

    #[test]
    fn no_complementarity_means_no_capture_rate() {
        let v: Vec<_> = (0..10).map(|i| outcome(i, "d", i % 2 == 0, i % 2 == 0)).collect();
        let r = oracle_bound(&v, None).unwrap();
        assert_eq!(r.overall.headroom(), 0.0);
        assert_eq!(r.overall.capture_rate(), None);
        assert_eq!(r.overall.oracle_accuracy(), 0.5);
    }

    #[test]
    fn shade_arena_row() {
        // 64 items: human 42.2%, AI 57.8%, oracle 79.7%, i.e. 27, 37 and 51
        // correct, which forces the split 13 / 24 / 14 / 13.
        let mut v = Vec::new();
        for (ai, human, count) in [(true, true, 13), (true, false, 24), (false, true, 14), (false, false, 13)] {
            for _ in 0..count {
                v.push(outcome(v.len(), "SHADE-Arena", ai, human));
            }
        }
        let q = agreement_quadrants(&v);
        assert_eq!((q.both_correct, q.ai_only, q.human_only, q.neither), (13, 24, 14, 13));
        let r = oracle_bound(&v, None).unwrap();
        let row = &r.per_dataset[0];
        assert_eq!(format!("{:.1}", row.human_accuracy() * 100.0), "42.2");
        assert_eq!(format!("{:.1}", row.ai_accuracy() * 100.0), "57.8");
        assert_eq!(format!("{:.1}", row.oracle_accuracy() * 100.0), "79.7");
        assert_eq!(format!("{:+.1}", row.headroom() * 100.0), "+21.9");
    }

    #[test]
    fn subset_counts_and_ties() {
        let cands: Vec<_> = (0..100)
            .map(|i| SubsetCandidate {
                item_id: format!("q{i:03}"),
                dataset: "d".into(),
                confidence: (i as f64 * 37.0 % 100.0) / 100.0,
            })
            .collect();
        let s = select_low_confidence_subset(&cands, &SubsetFractions::default());
        assert_eq!(s.len(), 10);
        let mut sorted = cands.clone();
        sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
        assert!(sorted[..10].iter().all(|c| s.contains(&c.item_id)));

        let tie: Vec<_> = ["b", "a", "c", "d"]
            .iter()
            .map(|id| SubsetCandidate {
                item_id: id.to_string(),
                dataset: "d".into(),
                confidence: if *id == "d" { 0.1 } else { 0.5 },
            })
            .collect();
        let f = SubsetFractions {
            default: 0.5,
            per_dataset: BTreeMap::new(),
        };
        let s = select_low_confidence_subset(&tie, &f);
        assert_eq!(s, BTreeSet::from(["a".to_string(), "d".to_string()]));
    }

    #[test]
    fn subset_fraction_lookup() {
        let f = SubsetFractions::default();
        assert_eq!(f.fraction_for("Big-Bench"), 0.2);
        assert_eq!(f.fraction_for("big_bench"), 0.2);
        assert_eq!(f.fraction_for("QuALITY"), 0.1);
        assert_eq!(subset_count(0.1, 30), 3);
        assert_eq!(subset_count(0.1, 31), 4);
        assert_eq!(subset_count(0.2, 387), 78);
    }
}
