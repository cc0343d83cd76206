//! Confidence-based routing between the AI answer and the human answer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::Judgment;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// AI if `ai >= t`, else human.
    OneThreshold,
    /// Human if `human > t_h` and `ai < t_a`, else AI.
    TwoThreshold,
    /// AI if `ai >= t` or `ai > human`, else human.
    OneThresholdCompare,
    /// AI if `ai > human`, else human.
    Compare,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::OneThreshold,
        PolicyKind::TwoThreshold,
        PolicyKind::OneThresholdCompare,
        PolicyKind::Compare,
    ];

    pub fn short(&self) -> &'static str {
        match self {
            PolicyKind::OneThreshold => "1T",
            PolicyKind::TwoThreshold => "2T",
            PolicyKind::OneThresholdCompare => "1TC",
            PolicyKind::Compare => "CMP",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::OneThreshold => "one_threshold",
            PolicyKind::TwoThreshold => "two_threshold",
            PolicyKind::OneThresholdCompare => "one_threshold_compare",
            PolicyKind::Compare => "compare",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == name || k.short().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown policy kind `{name}`")))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    None,
    Single { t: f64 },
    Pair { human: f64, ai: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ai,
    Human,
}

/// A policy kind with its learned per-group parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub kind: PolicyKind,
    pub grid_step: f64,
    pub thresholds: BTreeMap<String, Thresholds>,
}

impl RoutingPolicy {
    /// A policy of `kind` with the same parameters in every group.
    pub fn uniform<'a>(
        kind: PolicyKind,
        thresholds: Thresholds,
        groups: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        RoutingPolicy {
            kind,
            grid_step: DEFAULT_GRID_STEP,
            thresholds: groups.into_iter().map(|g| (g.to_string(), thresholds)).collect(),
        }
    }

    /// One-threshold policy at `t = 0`: always the AI answer.
    pub fn always_ai<'a>(groups: impl IntoIterator<Item = &'a str>) -> Self {
        Self::uniform(PolicyKind::OneThreshold, Thresholds::Single { t: 0.0 }, groups)
    }

    fn params(&self, group: &str) -> Result<Thresholds> {
        self.thresholds
            .get(group)
            .copied()
            .ok_or_else(|| Error::UnknownGroup(group.to_string()))
    }
}

pub const DEFAULT_GRID_STEP: f64 = 0.01;

fn route(kind: PolicyKind, params: Thresholds, ai: f64, human: f64) -> Source {
    let use_ai = match (kind, params) {
        (PolicyKind::OneThreshold, Thresholds::Single { t }) => ai >= t,
        (PolicyKind::TwoThreshold, Thresholds::Pair { human: t_h, ai: t_a }) => !(human > t_h && ai < t_a),
        (PolicyKind::OneThresholdCompare, Thresholds::Single { t }) => ai >= t || ai > human,
        (PolicyKind::Compare, _) => ai > human,
        // mismatched parameters are rejected when policies are built or loaded
        (kind, params) => unreachable!("{kind} with {params:?}"),
    };
    if use_ai {
        Source::Ai
    } else {
        Source::Human
    }
}

/// Routes one (AI, human) confidence pair.
pub fn decide(policy: &RoutingPolicy, group: &str, ai_conf: f64, human_conf: f64) -> Result<Source> {
    let params = policy.params(group)?;
    check_params(policy.kind, params)?;
    Ok(route(policy.kind, params, ai_conf, human_conf))
}

/// Routing when no human answer exists: `Some(Ai)` if the policy would pick
/// the AI whatever the human confidence, `None` otherwise.
///
/// Every policy is monotone in the human confidence, so checking the most
/// human-favourable value (1.0) suffices.
pub fn decide_without_human(policy: &RoutingPolicy, group: &str, ai_conf: f64) -> Result<Option<Source>> {
    Ok(match decide(policy, group, ai_conf, 1.0)? {
        Source::Ai => Some(Source::Ai),
        Source::Human => None,
    })
}

fn check_params(kind: PolicyKind, params: Thresholds) -> Result<()> {
    let ok = match (kind, params) {
        (PolicyKind::OneThreshold | PolicyKind::OneThresholdCompare, Thresholds::Single { t }) => (0.0..=1.0).contains(&t),
        (PolicyKind::TwoThreshold, Thresholds::Pair { human, ai }) => {
            (0.0..=1.0).contains(&human) && (0.0..=1.0).contains(&ai)
        }
        (PolicyKind::Compare, _) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("parameters {params:?} do not fit policy {kind}")))
    }
}

/// Grid values `0, step, ..., 1`, computed as `k / n` to avoid drift.
pub fn grid(step: f64) -> Result<Vec<f64>> {
    let n = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((1.0 / step) - n).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} must divide 1")));
    }
    let n = n as usize;
    Ok((0..=n).map(|k| k as f64 / n as f64).collect())
}

/// One routing decision to make: an AI judgment paired with (at most) one
/// human judgment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub item_id: String,
    pub dataset: String,
    pub group: String,
    pub participant_id: Option<String>,
    pub ai_conf: f64,
    pub ai_correct: bool,
    pub human: Option<HumanView>,
    /// Items outside a condition's subset always take the AI answer.
    pub ai_locked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanView {
    pub conf: f64,
    pub correct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Majority,
    Individual,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Majority, Mode::Individual];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Majority => "majority",
            Mode::Individual => "individual",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "majority" | "maj" => Ok(Mode::Majority),
            "individual" | "ind" => Ok(Mode::Individual),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Both sides' judgments for one item, with calibrated confidences attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedItem {
    pub item_id: String,
    pub dataset: String,
    pub group: String,
    pub ai: Judgment,
    pub human_majority: Option<Judgment>,
    pub human_individual: Vec<Judgment>,
    #[serde(default)]
    pub ai_locked: bool,
}

impl PairedItem {
    pub fn observations(&self, mode: Mode) -> Vec<Observation> {
        let obs = |human: Option<&Judgment>| Observation {
            item_id: self.item_id.clone(),
            dataset: self.dataset.clone(),
            group: self.group.clone(),
            participant_id: human.and_then(|h| h.participant_id.clone()),
            ai_conf: self.ai.confidence(),
            ai_correct: self.ai.correct,
            human: human.map(|h| HumanView {
                conf: h.confidence(),
                correct: h.correct,
            }),
            ai_locked: self.ai_locked,
        };
        match mode {
            Mode::Majority => vec![obs(self.human_majority.as_ref())],
            Mode::Individual if self.human_individual.is_empty() => vec![obs(None)],
            Mode::Individual => self.human_individual.iter().map(|h| obs(Some(h))).collect(),
        }
    }
}

pub fn observations(items: &[PairedItem], mode: Mode) -> Vec<Observation> {
    items.iter().flat_map(|p| p.observations(mode)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Tally {
    correct: usize,
    to_human: usize,
}

fn tally(kind: PolicyKind, params: Thresholds, obs: &[&Observation]) -> Tally {
    let mut t = Tally::default();
    for o in obs {
        let source = match (o.ai_locked, o.human) {
            (false, Some(h)) => route(kind, params, o.ai_conf, h.conf),
            _ => Source::Ai,
        };
        let correct = match source {
            Source::Ai => o.ai_correct,
            Source::Human => {
                t.to_human += 1;
                o.human.is_some_and(|h| h.correct)
            }
        };
        t.correct += correct as usize;
    }
    t
}

fn candidates(kind: PolicyKind, grid: &[f64]) -> Vec<Thresholds> {
    match kind {
        PolicyKind::OneThreshold | PolicyKind::OneThresholdCompare => {
            grid.iter().map(|&t| Thresholds::Single { t }).collect()
        }
        PolicyKind::TwoThreshold => grid
            .iter()
            .flat_map(|&human| grid.iter().map(move |&ai| Thresholds::Pair { human, ai }))
            .collect(),
        PolicyKind::Compare => vec![Thresholds::None],
    }
}

/// Exhaustive grid search for one group.
///
/// Maximizes correct routings; among maximizers, fewest routed to human;
/// remaining ties go to the first candidate in ascending threshold order.
fn best_params(kind: PolicyKind, grid: &[f64], obs: &[&Observation]) -> Thresholds {
    let mut best: Option<(Thresholds, Tally)> = None;
    for cand in candidates(kind, grid) {
        let t = tally(kind, cand, obs);
        let better = match best {
            None => true,
            Some((_, b)) => t.correct > b.correct || (t.correct == b.correct && t.to_human < b.to_human),
        };
        if better {
            best = Some((cand, t));
        }
    }
    best.expect("at least one candidate").0
}

/// Learns per-group thresholds on calibration observations.
///
/// Observations without a human side (and not AI-locked) are ignored.
pub fn learn_policy(kind: PolicyKind, calibration: &[Observation], grid_step: f64) -> Result<RoutingPolicy> {
    let grid = grid(grid_step)?;
    let mut by_group: BTreeMap<&str, Vec<&Observation>> = BTreeMap::new();
    for o in calibration {
        let entry = by_group.entry(o.group.as_str()).or_default();
        if o.human.is_some() || o.ai_locked {
            entry.push(o);
        }
    }
    let mut thresholds = BTreeMap::new();
    for (group, obs) in by_group {
        if !obs.iter().any(|o| o.human.is_some()) {
            return Err(Error::EmptyGroup(group.to_string()));
        }
        thresholds.insert(group.to_string(), best_params(kind, &grid, &obs));
    }
    Ok(RoutingPolicy {
        kind,
        grid_step,
        thresholds,
    })
}

/// Calibration-set hybrid accuracy and human-routed count of `params` on
/// `obs`, exposed for checking learned policies.
pub fn score_params(kind: PolicyKind, params: Thresholds, obs: &[Observation]) -> (usize, usize) {
    let refs: Vec<&Observation> = obs.iter().filter(|o| o.human.is_some() || o.ai_locked).collect();
    let t = tally(kind, params, &refs);
    (t.correct, t.to_human)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedDecision {
    pub item_id: String,
    pub dataset: String,
    pub participant_id: Option<String>,
    pub source: Source,
    pub chosen_correct: bool,
    pub ai_conf: f64,
    pub human_conf: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub n: usize,
    pub correct: usize,
    pub to_human: usize,
    pub ai_correct: usize,
    /// Observations with a human answer, and how many of those were right.
    pub human_n: usize,
    pub human_correct: usize,
}

impl AccuracyRow {
    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            f64::NAN
        } else {
            a as f64 / b as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.correct, self.n)
    }

    pub fn ai_accuracy(&self) -> f64 {
        Self::ratio(self.ai_correct, self.n)
    }

    pub fn human_accuracy(&self) -> f64 {
        Self::ratio(self.human_correct, self.human_n)
    }

    pub fn human_share(&self) -> f64 {
        Self::ratio(self.to_human, self.n)
    }

    fn add(&mut self, d: &RoutedDecision, o: &Observation) {
        self.n += 1;
        self.correct += d.chosen_correct as usize;
        self.to_human += (d.source == Source::Human) as usize;
        self.ai_correct += o.ai_correct as usize;
        if let Some(h) = o.human {
            self.human_n += 1;
            self.human_correct += h.correct as usize;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub kind: PolicyKind,
    pub mode: Mode,
    pub overall: AccuracyRow,
    pub per_dataset: Vec<AccuracyRow>,
    /// Individual-mode observations with no human answer that the policy
    /// would have sent to a human; excluded from every row.
    pub unroutable: usize,
    pub decisions: Vec<RoutedDecision>,
}

impl AccuracyReport {
    pub fn dataset(&self, name: &str) -> Option<&AccuracyRow> {
        self.per_dataset.iter().find(|r| r.dataset == name)
    }
}

pub fn evaluate_observations(policy: &RoutingPolicy, obs: &[Observation], mode: Mode) -> Result<AccuracyReport> {
    let mut overall = AccuracyRow {
        dataset: "Overall".into(),
        ..Default::default()
    };
    let mut per_dataset: BTreeMap<&str, AccuracyRow> = BTreeMap::new();
    let mut decisions = Vec::with_capacity(obs.len());
    let mut unroutable = 0;
    for o in obs {
        let source = if o.ai_locked {
            Source::Ai
        } else {
            match (o.human, mode) {
                (Some(h), _) => decide(policy, &o.group, o.ai_conf, h.conf)?,
                (None, Mode::Majority) => {
                    return Err(Error::MissingSide {
                        item_id: o.item_id.clone(),
                        side: "human majority",
                    })
                }
                (None, Mode::Individual) => match decide_without_human(policy, &o.group, o.ai_conf)? {
                    Some(s) => s,
                    None => {
                        unroutable += 1;
                        continue;
                    }
                },
            }
        };
        let chosen_correct = match source {
            Source::Ai => o.ai_correct,
            Source::Human => o.human.is_some_and(|h| h.correct),
        };
        let d = RoutedDecision {
            item_id: o.item_id.clone(),
            dataset: o.dataset.clone(),
            participant_id: o.participant_id.clone(),
            source,
            chosen_correct,
            ai_conf: o.ai_conf,
            human_conf: o.human.map(|h| h.conf),
        };
        overall.add(&d, o);
        per_dataset
            .entry(o.dataset.as_str())
            .or_insert_with(|| AccuracyRow {
                dataset: o.dataset.clone(),
                ..Default::default()
            })
            .add(&d, o);
        decisions.push(d);
    }
    Ok(AccuracyReport {
        kind: policy.kind,
        mode,
        overall,
        per_dataset: per_dataset.into_values().collect(),
        unroutable,
        decisions,
    })
}

/// Routes every test item (majority mode) or every participant response
/// (individual mode) and tallies accuracy overall and per dataset.
pub fn evaluate_hybrid(policy: &RoutingPolicy, items: &[PairedItem], mode: Mode) -> Result<AccuracyReport> {
    evaluate_observations(policy, &observations(items, mode), mode)
}

/// Human-side judgments of one condition for one item.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HumanJudgments {
    pub majority: Option<Judgment>,
    pub individual: Vec<Judgment>,
}

/// Swaps in a condition's human judgments on `subset`; every other item is
/// locked to its AI answer for routing (its judgments are left as they were).
pub fn condition_overlay(
    base: &[PairedItem],
    condition: &BTreeMap<String, HumanJudgments>,
    subset: &BTreeSet<String>,
) -> Result<Vec<PairedItem>> {
    base.iter()
        .map(|p| {
            let mut out = p.clone();
            if subset.contains(&p.item_id) {
                let h = condition.get(&p.item_id).ok_or_else(|| Error::MissingSide {
                    item_id: p.item_id.clone(),
                    side: "condition human",
                })?;
                out.human_majority = h.majority.clone();
                out.human_individual = h.individual.clone();
                out.ai_locked = false;
            } else {
                out.ai_locked = true;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(group: &str, ai: f64, ai_ok: bool, human: f64, human_ok: bool) -> Observation {
        Observation {
            item_id: format!("{group}-{ai}-{human}"),
            dataset: group.into(),
            group: group.into(),
            participant_id: None,
            ai_conf: ai,
            ai_correct: ai_ok,
            human: Some(HumanView {
                conf: human,
                correct: human_ok,
            }),
            ai_locked: false,
        }
    }

    fn single(kind: PolicyKind, t: f64) -> RoutingPolicy {
        RoutingPolicy::uniform(kind, Thresholds::Single { t }, ["g"])
    }

    #[test]
    fn decision_rules() {
        let p = single(PolicyKind::OneThreshold, 0.0);
        assert_eq!(decide(&p, "g", 0.0, 1.0).unwrap(), Source::Ai);
        let p = RoutingPolicy::uniform(PolicyKind::TwoThreshold, Thresholds::Pair { human: 0.7, ai: 0.5 }, ["g"]);
        assert_eq!(decide(&p, "g", 0.4, 0.8).unwrap(), Source::Human);
        assert_eq!(decide(&p, "g", 0.5, 0.8).unwrap(), Source::Ai);
        assert_eq!(decide(&p, "g", 0.4, 0.7).unwrap(), Source::Ai);
        let p = RoutingPolicy::uniform(PolicyKind::Compare, Thresholds::None, ["g"]);
        assert_eq!(decide(&p, "g", 0.6, 0.6).unwrap(), Source::Human);
        assert_eq!(decide(&p, "g", 0.61, 0.6).unwrap(), Source::Ai);
        let p = single(PolicyKind::OneThresholdCompare, 0.8);
        assert_eq!(decide(&p, "g", 0.5, 0.4).unwrap(), Source::Ai);
        assert_eq!(decide(&p, "g", 0.5, 0.6).unwrap(), Source::Human);
        assert_eq!(decide(&p, "g", 0.8, 0.9).unwrap(), Source::Ai);
        assert!(matches!(decide(&p, "other", 0.5, 0.5), Err(Error::UnknownGroup(_))));
    }

    #[test]
    fn grid_has_101_points() {
        let g = grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
        assert_eq!(g[37], 0.37);
        assert!(grid(0.03).is_err());
    }

    #[test]
    fn dominant_ai_learns_zero() {
        let cal: Vec<_> = (0..10).map(|i| obs("g", i as f64 / 10.0, true, 0.9, false)).collect();
        let p = learn_policy(PolicyKind::OneThreshold, &cal, 0.01).unwrap();
        assert_eq!(p.thresholds["g"], Thresholds::Single { t: 0.0 });
    }

    #[test]
    fn learns_the_brute_force_optimum() {
        // Human right exactly on the three lowest-AI-confidence items.
        let confs = [0.12, 0.18, 0.25, 0.41, 0.47, 0.55, 0.63, 0.71, 0.86, 0.93];
        let cal: Vec<_> = confs
            .iter()
            .enumerate()
            .map(|(i, &c)| obs("g", c, i >= 3 && i != 5, 0.5, i < 3))
            .collect();
        let p = learn_policy(PolicyKind::OneThreshold, &cal, 0.01).unwrap();
        // independent brute force over the 101 grid points
        let mut best = (0usize, usize::MAX, f64::NAN);
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let mut correct = 0;
            let mut human = 0;
            for o in &cal {
                if o.ai_conf >= t {
                    correct += o.ai_correct as usize;
                } else {
                    human += 1;
                    correct += o.human.unwrap().correct as usize;
                }
            }
            if correct > best.0 || (correct == best.0 && human < best.1) {
                best = (correct, human, t);
            }
        }
        assert_eq!(p.thresholds["g"], Thresholds::Single { t: best.2 });
        assert_eq!(best.0, 9);
        // t in (0.25, 0.41] routes exactly the three; 0.26 is the smallest grid point
        assert_eq!(best.2, 0.26);
    }

    #[test]
    fn empty_group_is_an_error() {
        let mut o = obs("g", 0.5, true, 0.5, true);
        o.human = None;
        assert!(matches!(
            learn_policy(PolicyKind::OneThreshold, &[o], 0.01),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn individual_mode_unroutable_rows() {
        let mut no_human = obs("g", 0.3, true, 0.0, false);
        no_human.human = None;
        let mut confident = no_human.clone();
        confident.ai_conf = 0.9;
        let p = single(PolicyKind::OneThreshold, 0.5);
        let r = evaluate_observations(&p, &[no_human.clone(), confident.clone()], Mode::Individual).unwrap();
        assert_eq!(r.unroutable, 1);
        assert_eq!(r.overall.n, 1);
        assert!(evaluate_observations(&p, &[confident], Mode::Majority).is_err());
    }

    #[test]
    fn always_ai_matches_ai_accuracy() {
        let test: Vec<_> = (0..20)
            .map(|i| obs(if i % 2 == 0 { "a" } else { "b" }, (i as f64) / 20.0, i % 3 == 0, 0.99, true))
            .collect();
        let r = evaluate_observations(&RoutingPolicy::always_ai(["a", "b"]), &test, Mode::Majority).unwrap();
        assert_eq!(r.overall.correct, r.overall.ai_correct);
        assert_eq!(r.overall.to_human, 0);
        assert_eq!(r.per_dataset.len(), 2);
    }

    #[test]
    fn oracle_confidences_reach_the_per_item_max() {
        let pattern = [(true, true), (true, false), (false, true), (false, false)];
        let test: Vec<_> = pattern
            .iter()
            .cycle()
            .take(12)
            .map(|&(a, h)| obs("g", a as u8 as f64, a, h as u8 as f64, h))
            .collect();
        let r = evaluate_observations(
            &RoutingPolicy::uniform(PolicyKind::Compare, Thresholds::None, ["g"]),
            &test,
            Mode::Majority,
        )
        .unwrap();
        assert_eq!(r.overall.correct, 9);
    }
}
