//! Subtask routing statistics for the delegation condition.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ItemSet};
use crate::error::{Error, Result};

pub const DEFAULT_DELEGATION_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    #[serde(default)]
    pub text_ref: String,
    pub ai_confidence: f64,
    pub routed_to_human: bool,
    #[serde(default)]
    pub human_answer_present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelegationRecord {
    pub item_id: String,
    /// Taken from the item file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub subtasks: Vec<Subtask>,
}

impl DelegationRecord {
    pub fn dataset(&self) -> &str {
        self.dataset.as_deref().unwrap_or("unknown")
    }
}

/// Reads `decompositions.jsonl`. Records without a dataset take it from
/// `items`; one that cannot be resolved is an error.
pub fn load_decompositions(path: &Path, items: Option<&ItemSet>) -> Result<Vec<DelegationRecord>> {
    let mut out = Vec::new();
    read_jsonl(path, |line, mut record: DelegationRecord| {
        let bad = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        if let Some(s) = record.subtasks.iter().find(|s| !(0.0..=1.0).contains(&s.ai_confidence)) {
            return Err(bad(format!("ai_confidence {} outside [0,1]", s.ai_confidence)));
        }
        if record.dataset.is_none() {
            let item = items
                .and_then(|set| set.get(&record.item_id))
                .ok_or_else(|| bad(format!("no dataset for item `{}`", record.item_id)))?;
            record.dataset = Some(item.dataset.clone());
        }
        out.push(record);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_decompositions(path: &Path, records: &[DelegationRecord]) -> Result<()> {
    write_jsonl(path, records)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DelegationRow {
    pub dataset: String,
    pub items: usize,
    pub subtasks: usize,
    pub to_human: usize,
    /// Summed AI confidence of human-routed and AI-kept subtasks.
    pub human_conf_sum: f64,
    pub ai_conf_sum: f64,
}

impl DelegationRow {
    pub fn to_ai(&self) -> usize {
        self.subtasks - self.to_human
    }

    pub fn avg_subtasks(&self) -> f64 {
        self.subtasks as f64 / self.items as f64
    }

    pub fn avg_to_human(&self) -> f64 {
        self.to_human as f64 / self.items as f64
    }

    pub fn avg_to_ai(&self) -> f64 {
        self.to_ai() as f64 / self.items as f64
    }

    pub fn share_to_human(&self) -> f64 {
        self.to_human as f64 / self.subtasks as f64
    }

    pub fn mean_human_routed_confidence(&self) -> Option<f64> {
        (self.to_human > 0).then(|| self.human_conf_sum / self.to_human as f64)
    }

    pub fn mean_ai_kept_confidence(&self) -> Option<f64> {
        (self.to_ai() > 0).then(|| self.ai_conf_sum / self.to_ai() as f64)
    }

    fn add(&mut self, record: &DelegationRecord) {
        self.items += 1;
        for s in &record.subtasks {
            self.subtasks += 1;
            if s.routed_to_human {
                self.to_human += 1;
                self.human_conf_sum += s.ai_confidence;
            } else {
                self.ai_conf_sum += s.ai_confidence;
            }
        }
    }
}

/// A subtask whose routing flag disagrees with `confidence < threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingViolation {
    pub item_id: String,
    pub subtask_index: usize,
    pub ai_confidence: f64,
    pub routed_to_human: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelegationReport {
    pub threshold: f64,
    pub overall: DelegationRow,
    pub per_dataset: Vec<DelegationRow>,
    pub violations: Vec<RoutingViolation>,
}

pub fn delegation_stats(records: &[DelegationRecord], threshold: f64) -> DelegationReport {
    let mut overall = DelegationRow {
        dataset: "All".into(),
        ..Default::default()
    };
    let mut per_dataset: BTreeMap<&str, DelegationRow> = BTreeMap::new();
    let mut violations = Vec::new();
    for r in records {
        overall.add(r);
        per_dataset
            .entry(r.dataset())
            .or_insert_with(|| DelegationRow {
                dataset: r.dataset().to_string(),
                ..Default::default()
            })
            .add(r);
        for (i, s) in r.subtasks.iter().enumerate() {
            if s.routed_to_human != (s.ai_confidence < threshold) {
                violations.push(RoutingViolation {
                    item_id: r.item_id.clone(),
                    subtask_index: i,
                    ai_confidence: s.ai_confidence,
                    routed_to_human: s.routed_to_human,
                });
            }
        }
    }
    DelegationReport {
        threshold,
        overall,
        per_dataset: per_dataset.into_values().collect(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, confs: &[(f64, bool)]) -> DelegationRecord {
        DelegationRecord {
            item_id: id.into(),
            dataset: Some("d".into()),
            subtasks: confs
                .iter()
                .map(|&(c, routed)| Subtask {
                    text_ref: String::new(),
                    ai_confidence: c,
                    routed_to_human: routed,
                    human_answer_present: routed,
                })
                .collect(),
        }
    }

    #[test]
    fn single_record() {
        let r = delegation_stats(&[record("a", &[(0.9, false), (0.7, true)])], 0.8);
        assert_eq!((r.overall.to_human, r.overall.to_ai()), (1, 1));
        assert_eq!(r.overall.share_to_human(), 0.5);
        assert!(r.violations.is_empty());
        assert_eq!(r.overall.mean_human_routed_confidence(), Some(0.7));
    }

    #[test]
    fn inconsistent_flag_is_reported() {
        let r = delegation_stats(&[record("a", &[(0.85, true), (0.2, true)])], 0.8);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].subtask_index, 0);
        // threshold itself is kept by the AI
        let r = delegation_stats(&[record("b", &[(0.8, false)])], 0.8);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn load_resolves_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"item_id\":\"x\",\"dataset\":\"GPQA\",\"subtasks\":[{\"ai_confidence\":0.5,\"routed_to_human\":true}]}\n",
        )
        .unwrap();
        let recs = load_decompositions(&path, None).unwrap();
        assert_eq!(recs[0].dataset(), "GPQA");
        std::fs::write(&path, "{\"item_id\":\"x\",\"subtasks\":[]}\n").unwrap();
        assert!(load_decompositions(&path, None).is_err());
        std::fs::write(
            &path,
            "{\"item_id\":\"x\",\"dataset\":\"d\",\"subtasks\":[{\"ai_confidence\":1.5,\"routed_to_human\":false}]}\n",
        )
        .unwrap();
        assert!(load_decompositions(&path, None).is_err());
    }
}
