//! The end-to-end run, split into stages whose outputs serialize to JSON.
//!
//! `ingest` → `calibrate` → `route` → `analyze`; [`run_pipeline`] chains them
//! and emits the report bundle. Each stage records the hash of the
//! configuration it ran under so later stages refuse stale inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{
    cluster_responses, computed_confidence, direct_ask_confidence, ensemble_signals, individual_judgments, judge,
    AdjudicationTable, ConfidenceMethod, EquivalenceOracle, Judgment,
};
use crate::analyze::complementarity::subset_count;
use crate::analyze::{
    delegation_stats, load_decompositions, option_one_bias, oracle_bound, outcomes, overreliance_report,
    select_low_confidence_subset, DelegationReport, HumanObservation, OracleReport,
    OverrelianceReport, PositionalBias, SubsetCandidate,
};
use crate::calibrate::{
    auroc, brier, ece, fit_calibrator, reliability_curve, CalibrationMap, CalibrationMeta, CalibratorKind,
    ReliabilityPoint, ScoredPair,
};
use crate::config::{Resolved, RunConfig, SubsetScope};
use crate::corpus::{
    cap_human_responses, load_items_with, load_responses, split_calibration_test, CanonicalAnswer, Condition, Item,
    ItemSet, Side, Split, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::report::{build_bundle, emit_report, ReportBundle};
use crate::route::{
    condition_overlay, evaluate_hybrid, learn_policy, observations, AccuracyReport, HumanJudgments, Mode, PairedItem,
    PolicyKind, RoutingPolicy,
};

pub const ARTIFACT_DIR: &str = "artifacts";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash of everything except the report section, which only affects output
/// formatting.
/// Canonical config text without the output directory, so a bundle does not
/// depend on where it was written.
pub fn recorded_config(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.paths.output = None;
    c.canonical()
}

pub fn analysis_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.report = Default::default();
    sha256_hex(recorded_config(&c).as_bytes())
}

pub fn config_hash(config: &RunConfig) -> String {
    sha256_hex(recorded_config(config).as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    /// As written in the config.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn digest_file(role: &str, shown: &Path, actual: &Path) -> Result<InputDigest> {
    let data = fs::read(actual).map_err(|e| Error::io(actual, e))?;
    Ok(InputDigest {
        role: role.to_string(),
        path: shown.display().to_string(),
        sha256: sha256_hex(&data),
        bytes: data.len() as u64,
    })
}

pub fn input_digests(config: &RunConfig) -> Result<Vec<InputDigest>> {
    let p = &config.paths;
    [
        ("items", &p.items),
        ("responses", &p.responses),
        ("decompositions", &p.decompositions),
        ("adjudications", &p.adjudications),
    ]
    .into_iter()
    .filter_map(|(role, path)| path.as_ref().map(|path| (role, path)))
    .map(|(role, path)| digest_file(role, path, &config.resolve_path(path)))
    .collect()
}

// ---------------------------------------------------------------------------
// ingest

/// Both sides' raw judgments for one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemJudgments {
    pub item_id: String,
    pub dataset: String,
    pub group: String,
    pub split: Split,
    pub ai: Judgment,
    /// Raw AI confidence under every method, keyed by method name.
    pub ai_scores: BTreeMap<String, f64>,
    pub humans: BTreeMap<Condition, HumanJudgments>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub items: usize,
    pub items_per_dataset: BTreeMap<String, usize>,
    pub groups: BTreeSet<String>,
    pub ai_responses: usize,
    pub human_responses: BTreeMap<Condition, usize>,
    pub dropped_by_cap: usize,
    pub unresolvable_answers: usize,
    pub calibration_items: usize,
    pub test_items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub analysis_hash: String,
    pub inputs: Vec<InputDigest>,
    pub items: Vec<Item>,
    pub split: SplitAssignment,
    pub judgments: Vec<ItemJudgments>,
    pub summary: IngestSummary,
    pub positional_bias: PositionalBias,
}

fn ai_scores(item: &Item, responses: &[&crate::corpus::Response], oracle: &EquivalenceOracle, config: &RunConfig) -> Result<BTreeMap<String, f64>> {
    let clusters = cluster_responses(responses, oracle)?;
    let mut scores = BTreeMap::new();
    scores.insert(ConfidenceMethod::DirectAsk.name(), direct_ask_confidence(&clusters));
    scores.insert(ConfidenceMethod::Computed.name(), computed_confidence(&clusters, item.kind));
    for (signal, value) in ensemble_signals(&clusters, config.signal_options()).iter() {
        scores.insert(signal.name().to_string(), value);
    }
    Ok(scores)
}

pub fn ingest(config: &RunConfig, resolved: &Resolved) -> Result<IngestArtifact> {
    let items = load_items_with(&config.items_path()?, &config.group_map())?;
    let raw = load_responses(&config.responses_path()?, &items)?;
    let oracle = match config.adjudications_path() {
        Some(path) => EquivalenceOracle::Adjudicated(AdjudicationTable::load(&path)?),
        None => EquivalenceOracle::NormalizedExact,
    };
    let positional_bias = option_one_bias(&items, &raw, &config.analysis.bias_target)?;
    let responses = cap_human_responses(&raw, config.capping.max_per_item, config.capping.seed);
    let split = split_calibration_test(&items, config.split.fraction, config.split.seed)?;

    let signal_options = config.signal_options();
    let judgments = items
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|item| {
            let ai = responses.ai(&item.item_id);
            if ai.is_empty() {
                return Err(Error::MissingSide {
                    item_id: item.item_id.clone(),
                    side: "AI",
                });
            }
            let mut humans = BTreeMap::new();
            for &condition in &resolved.conditions {
                let h = responses.human(&item.item_id, condition);
                if h.is_empty() {
                    continue;
                }
                humans.insert(
                    condition,
                    HumanJudgments {
                        majority: Some(judge(item, &h, &oracle, resolved.human_method, signal_options)?),
                        individual: individual_judgments(item, &h, &oracle),
                    },
                );
            }
            Ok(ItemJudgments {
                item_id: item.item_id.clone(),
                dataset: item.dataset.clone(),
                group: item.group.clone(),
                split: split.get(&item.item_id).expect("every item is assigned"),
                ai: judge(item, &ai, &oracle, resolved.ai_method, signal_options)?,
                ai_scores: ai_scores(item, &ai, &oracle, config)?,
                humans,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = IngestSummary {
        items: items.len(),
        dropped_by_cap: raw.len() - responses.len(),
        unresolvable_answers: raw
            .iter()
            .filter(|r| matches!(r.canonical, CanonicalAnswer::Unresolvable(_)))
            .count(),
        calibration_items: split.count(Split::Calibration),
        test_items: split.count(Split::Test),
        groups: items.groups().into_iter().map(str::to_string).collect(),
        ..Default::default()
    };
    for (dataset, list) in items.by_dataset() {
        summary.items_per_dataset.insert(dataset.to_string(), list.len());
    }
    for r in responses.iter() {
        match r.side {
            Side::Ai { .. } => summary.ai_responses += 1,
            Side::Human { condition, .. } => *summary.human_responses.entry(condition).or_default() += 1,
        }
    }
    Ok(IngestArtifact {
        analysis_hash: analysis_hash(config),
        inputs: input_digests(config)?,
        items: items.iter().cloned().collect(),
        split,
        judgments,
        summary,
        positional_bias,
    })
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanMap {
    pub condition: Condition,
    pub mode: Mode,
    pub map: CalibrationMap,
    /// Set when the condition had too little calibration data and the
    /// baseline map of the same mode is reused.
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetricRow {
    pub side: String,
    pub confidence_method: String,
    pub calibrator: CalibratorKind,
    pub n_train: usize,
    pub n_test: usize,
    pub ece: Option<f64>,
    pub brier: Option<f64>,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub id: String,
    pub points: Vec<ReliabilityPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub analysis_hash: String,
    pub ai: CalibrationMap,
    pub human: Vec<HumanMap>,
    pub metrics: Vec<CalibrationMetricRow>,
    pub reliability: Vec<ReliabilityCurve>,
}

impl CalibrationArtifact {
    pub fn human_map(&self, condition: Condition, mode: Mode) -> Option<&CalibrationMap> {
        self.human
            .iter()
            .find(|h| h.condition == condition && h.mode == mode)
            .map(|h| &h.map)
    }
}

fn human_pairs(judgments: &[ItemJudgments], split: Split, condition: Condition, mode: Mode) -> Vec<ScoredPair> {
    judgments
        .iter()
        .filter(|j| j.split == split)
        .filter_map(|j| j.humans.get(&condition))
        .flat_map(|h| match mode {
            Mode::Majority => h.majority.iter().collect::<Vec<_>>(),
            Mode::Individual => h.individual.iter().collect(),
        })
        .map(|j| ScoredPair::new(j.raw_confidence, j.correct))
        .collect()
}

fn ai_pairs(judgments: &[ItemJudgments], split: Split, method: &str) -> Vec<ScoredPair> {
    judgments
        .iter()
        .filter(|j| j.split == split)
        .map(|j| ScoredPair::new(j.ai_scores[method], j.ai.correct))
        .collect()
}

fn metric_row(side: &str, method: &str, kind: CalibratorKind, train: &[ScoredPair], test: &[ScoredPair], bins: usize) -> CalibrationMetricRow {
    let mut row = CalibrationMetricRow {
        side: side.to_string(),
        confidence_method: method.to_string(),
        calibrator: kind,
        n_train: train.len(),
        n_test: test.len(),
        ece: None,
        brier: None,
        auroc: None,
        error: None,
    };
    if test.is_empty() {
        row.error = Some("no test pairs".into());
        return row;
    }
    match fit_calibrator(train, kind) {
        Ok(map) => {
            let calibrated: Vec<ScoredPair> = test.iter().map(|p| ScoredPair::new(map.apply(p.score), p.label)).collect();
            row.ece = Some(ece(&calibrated, bins));
            row.brier = Some(brier(&calibrated));
            row.auroc = auroc(&calibrated);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn meta(side: &str, method: &str) -> CalibrationMeta {
    CalibrationMeta {
        side: side.to_string(),
        confidence_method: method.to_string(),
        split: "calibration".into(),
    }
}

fn calibrated(map: &CalibrationMap, pairs: &[ScoredPair]) -> Vec<ScoredPair> {
    pairs.iter().map(|p| ScoredPair::new(map.apply(p.score), p.label)).collect()
}

pub fn calibrate(config: &RunConfig, resolved: &Resolved, ingest: &IngestArtifact) -> Result<CalibrationArtifact> {
    let j = &ingest.judgments;
    let bins = config.calibration.ece_bins;
    let ai_method = resolved.ai_method.name();
    let ai_train = ai_pairs(j, Split::Calibration, &ai_method);
    let ai = fit_calibrator(&ai_train, resolved.calibrator)?.with_meta(meta("ai", &ai_method));

    let human_method = resolved.human_method.name();
    let mut human = Vec::new();
    for &mode in &resolved.modes {
        let base_train = human_pairs(j, Split::Calibration, Condition::Baseline, mode);
        let base_map = fit_calibrator(&base_train, resolved.calibrator)
            .map_err(|e| Error::InvalidInput(format!("human baseline ({mode}) calibration: {e}")))?
            .with_meta(meta(&format!("human/baseline/{mode}"), &human_method));
        for &condition in &resolved.conditions {
            if condition == Condition::Baseline {
                human.push(HumanMap {
                    condition,
                    mode,
                    map: base_map.clone(),
                    fallback_reason: None,
                });
                continue;
            }
            let train = human_pairs(j, Split::Calibration, condition, mode);
            let side = format!("human/{condition}/{mode}");
            let (map, fallback_reason) = match fit_calibrator(&train, resolved.calibrator) {
                Ok(map) => (map.with_meta(meta(&side, &human_method)), None),
                Err(e) => (base_map.clone(), Some(e.to_string())),
            };
            human.push(HumanMap {
                condition,
                mode,
                map,
                fallback_reason,
            });
        }
    }

    let mut metrics = Vec::new();
    let mut methods: Vec<String> = j.first().map(|x| x.ai_scores.keys().cloned().collect()).unwrap_or_default();
    // configured method first, the rest alphabetically
    methods.retain(|m| *m != ai_method);
    methods.insert(0, ai_method.clone());
    for method in &methods {
        let train = ai_pairs(j, Split::Calibration, method);
        let test = ai_pairs(j, Split::Test, method);
        for kind in CalibratorKind::ALL {
            metrics.push(metric_row("ai", method, kind, &train, &test, bins));
        }
    }
    for &mode in &resolved.modes {
        let train = human_pairs(j, Split::Calibration, Condition::Baseline, mode);
        let test = human_pairs(j, Split::Test, Condition::Baseline, mode);
        for kind in CalibratorKind::ALL {
            metrics.push(metric_row(&format!("human/baseline/{mode}"), &human_method, kind, &train, &test, bins));
        }
    }

    let mut reliability = Vec::new();
    let ai_test = ai_pairs(j, Split::Test, &ai_method);
    reliability.push(ReliabilityCurve {
        id: format!("ai_{ai_method}_raw"),
        points: reliability_curve(&ai_test, bins),
    });
    reliability.push(ReliabilityCurve {
        id: format!("ai_{ai_method}_{}", resolved.calibrator),
        points: reliability_curve(&calibrated(&ai, &ai_test), bins),
    });
    for &mode in &resolved.modes {
        let test = human_pairs(j, Split::Test, Condition::Baseline, mode);
        let map = &human
            .iter()
            .find(|h| h.condition == Condition::Baseline && h.mode == mode)
            .expect("baseline map fitted")
            .map;
        reliability.push(ReliabilityCurve {
            id: format!("human_baseline_{mode}_raw"),
            points: reliability_curve(&test, bins),
        });
        reliability.push(ReliabilityCurve {
            id: format!("human_baseline_{mode}_{}", resolved.calibrator),
            points: reliability_curve(&calibrated(map, &test), bins),
        });
    }

    Ok(CalibrationArtifact {
        analysis_hash: analysis_hash(config),
        ai,
        human,
        metrics,
        reliability,
    })
}

// ---------------------------------------------------------------------------
// route

fn with_calibration(j: &Judgment, map: &CalibrationMap) -> Judgment {
    let mut out = j.clone();
    out.calibrated_confidence = Some(map.apply(j.raw_confidence));
    out
}

fn condition_humans(j: &ItemJudgments, condition: Condition, calib: &CalibrationArtifact) -> Option<HumanJudgments> {
    let h = j.humans.get(&condition)?;
    let majority = calib.human_map(condition, Mode::Majority);
    let individual = calib.human_map(condition, Mode::Individual);
    Some(HumanJudgments {
        majority: match (&h.majority, majority) {
            (Some(m), Some(map)) => Some(with_calibration(m, map)),
            (m, None) => m.clone(),
            (None, _) => None,
        },
        individual: match individual {
            Some(map) => h.individual.iter().map(|x| with_calibration(x, map)).collect(),
            None => h.individual.clone(),
        },
    })
}

/// Baseline-condition pairs for one split, with calibrated confidences.
pub fn paired_items(ingest: &IngestArtifact, calib: &CalibrationArtifact, split: Split) -> Vec<PairedItem> {
    ingest
        .judgments
        .iter()
        .filter(|j| j.split == split)
        .map(|j| {
            let human = condition_humans(j, Condition::Baseline, calib).unwrap_or_default();
            PairedItem {
                item_id: j.item_id.clone(),
                dataset: j.dataset.clone(),
                group: j.group.clone(),
                ai: with_calibration(&j.ai, &calib.ai),
                human_majority: human.majority,
                human_individual: human.individual,
                ai_locked: false,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub dataset: String,
    pub items: usize,
    pub fraction: f64,
    pub selected: usize,
    pub selected_test: usize,
    /// Highest calibrated AI confidence inside the subset.
    pub max_confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedPolicy {
    pub mode: Mode,
    pub policy: RoutingPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridResult {
    pub kind: PolicyKind,
    pub condition: Condition,
    pub mode: Mode,
    /// Observations on which at least one side is right; no policy can beat it.
    pub oracle_correct: usize,
    pub report: AccuracyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteArtifact {
    pub analysis_hash: String,
    pub subset: BTreeSet<String>,
    pub subset_rows: Vec<SubsetRow>,
    pub policies: Vec<LearnedPolicy>,
    pub hybrid: Vec<HybridResult>,
    /// Requested conditions that had no data on the test subset.
    pub skipped_conditions: Vec<Condition>,
}

impl RouteArtifact {
    pub fn result(&self, kind: PolicyKind, condition: Condition, mode: Mode) -> Option<&HybridResult> {
        self.hybrid
            .iter()
            .find(|h| h.kind == kind && h.condition == condition && h.mode == mode)
    }
}

/// Test items with the condition's human judgments on the subset and the AI
/// answer locked everywhere else. Human judgments of locked items are
/// dropped so human accuracy columns describe the condition alone.
pub fn condition_items(
    ingest: &IngestArtifact,
    calib: &CalibrationArtifact,
    base: &[PairedItem],
    condition: Condition,
    subset_test: &BTreeSet<String>,
) -> Result<Vec<PairedItem>> {
    if condition == Condition::Baseline {
        return Ok(base.to_vec());
    }
    let humans: BTreeMap<String, HumanJudgments> = ingest
        .judgments
        .iter()
        .filter(|j| subset_test.contains(&j.item_id))
        .filter_map(|j| condition_humans(j, condition, calib).map(|h| (j.item_id.clone(), h)))
        .collect();
    let mut items = condition_overlay(base, &humans, subset_test)?;
    for p in items.iter_mut().filter(|p| p.ai_locked) {
        p.human_majority = None;
        p.human_individual.clear();
    }
    Ok(items)
}

fn subset(config: &RunConfig, ingest: &IngestArtifact, calib: &CalibrationArtifact) -> (BTreeSet<String>, Vec<SubsetRow>) {
    let fractions = config.subset_fractions();
    let candidates: Vec<SubsetCandidate> = ingest
        .judgments
        .iter()
        .filter(|j| config.subset.scope == SubsetScope::All || j.split == Split::Test)
        .map(|j| SubsetCandidate {
            item_id: j.item_id.clone(),
            dataset: j.dataset.clone(),
            confidence: calib.ai.apply(j.ai.raw_confidence),
        })
        .collect();
    let chosen = select_low_confidence_subset(&candidates, &fractions);
    let mut rows: BTreeMap<&str, SubsetRow> = BTreeMap::new();
    for c in &candidates {
        let row = rows.entry(c.dataset.as_str()).or_insert_with(|| SubsetRow {
            dataset: c.dataset.clone(),
            items: 0,
            fraction: fractions.fraction_for(&c.dataset),
            selected: 0,
            selected_test: 0,
            max_confidence: None,
        });
        row.items += 1;
        if chosen.contains(&c.item_id) {
            row.selected += 1;
            row.selected_test += ingest.split.get(&c.item_id).is_some_and(|s| s == Split::Test) as usize;
            row.max_confidence = Some(row.max_confidence.map_or(c.confidence, |m: f64| m.max(c.confidence)));
        }
    }
    debug_assert!(rows.values().all(|r| r.selected == subset_count(r.fraction, r.items)));
    (chosen, rows.into_values().collect())
}

pub fn route(config: &RunConfig, resolved: &Resolved, ingest: &IngestArtifact, calib: &CalibrationArtifact) -> Result<RouteArtifact> {
    let (subset, subset_rows) = subset(config, ingest, calib);
    let subset_test: BTreeSet<String> = subset
        .iter()
        .filter(|id| ingest.split.get(id) == Some(Split::Test))
        .cloned()
        .collect();

    let cal_items = paired_items(ingest, calib, Split::Calibration);
    let test_items = paired_items(ingest, calib, Split::Test);

    let mut policies = Vec::new();
    for &mode in &resolved.modes {
        let obs = observations(&cal_items, mode);
        for &kind in &resolved.policies {
            policies.push(LearnedPolicy {
                mode,
                policy: learn_policy(kind, &obs, config.routing.grid_step)?,
            });
        }
    }

    let mut hybrid = Vec::new();
    let mut skipped_conditions = Vec::new();
    for &condition in &resolved.conditions {
        let has_data = condition == Condition::Baseline
            || ingest
                .judgments
                .iter()
                .any(|j| subset_test.contains(&j.item_id) && j.humans.contains_key(&condition));
        if !has_data {
            skipped_conditions.push(condition);
            continue;
        }
        let items = condition_items(ingest, calib, &test_items, condition, &subset_test)?;
        for learned in &policies {
            let obs = observations(&items, learned.mode);
            let oracle_correct = obs
                .iter()
                .filter(|o| o.ai_correct || o.human.is_some_and(|h| h.correct))
                .count();
            hybrid.push(HybridResult {
                kind: learned.policy.kind,
                condition,
                mode: learned.mode,
                oracle_correct,
                report: evaluate_hybrid(&learned.policy, &items, learned.mode)?,
            });
        }
    }
    Ok(RouteArtifact {
        analysis_hash: analysis_hash(config),
        subset,
        subset_rows,
        policies,
        hybrid,
        skipped_conditions,
    })
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub analysis_hash: String,
    pub oracle: OracleReport,
    pub overreliance: Option<OverrelianceReport>,
    pub delegation: Option<DelegationReport>,
    pub positional_bias: PositionalBias,
}

pub fn analyze(
    config: &RunConfig,
    resolved: &Resolved,
    ingest: &IngestArtifact,
    calib: &CalibrationArtifact,
    routed: &RouteArtifact,
) -> Result<AnalysisArtifact> {
    let test_items = paired_items(ingest, calib, Split::Test);
    let hybrid = routed
        .result(resolved.oracle_policy, Condition::Baseline, Mode::Majority)
        .map(|h| &h.report);
    let oracle = oracle_bound(&outcomes(&test_items)?, hybrid)?;

    let subset_test: BTreeMap<String, bool> = ingest
        .judgments
        .iter()
        .filter(|j| j.split == Split::Test && routed.subset.contains(&j.item_id))
        .map(|j| (j.item_id.clone(), j.ai.correct))
        .collect();
    let mut human_obs = Vec::new();
    for j in ingest.judgments.iter().filter(|j| subset_test.contains_key(&j.item_id)) {
        for (&condition, h) in &j.humans {
            human_obs.extend(h.individual.iter().map(|x| HumanObservation {
                item_id: j.item_id.clone(),
                condition,
                correct: x.correct,
            }));
        }
    }
    let assisted = human_obs.iter().any(|o| o.condition != Condition::Baseline);
    let overreliance = if assisted {
        Some(overreliance_report(&subset_test, &human_obs, config.resampling_options())?)
    } else {
        None
    };

    let delegation = match config.decompositions_path() {
        Some(path) => {
            let items = ItemSet::new(ingest.items.clone())?;
            let records = load_decompositions(&path, Some(&items))?;
            Some(delegation_stats(&records, config.analysis.delegation_threshold))
        }
        None => None,
    };
    Ok(AnalysisArtifact {
        analysis_hash: analysis_hash(config),
        oracle,
        overreliance,
        delegation,
        positional_bias: ingest.positional_bias.clone(),
    })
}

// ---------------------------------------------------------------------------
// invariants

fn invariant(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Invariant(message()))
    }
}

/// Cross-checks between stage outputs; any failure maps to exit code 3.
pub fn check_invariants(ingest: &IngestArtifact, calib: &CalibrationArtifact, routed: &RouteArtifact, analysis: &AnalysisArtifact) -> Result<()> {
    let s = &ingest.summary;
    invariant(s.calibration_items + s.test_items == s.items, || {
        format!("split covers {} + {} of {} items", s.calibration_items, s.test_items, s.items)
    })?;
    for split in [Split::Calibration, Split::Test] {
        for p in paired_items(ingest, calib, split) {
            let confs = std::iter::once(p.ai.confidence())
                .chain(p.human_majority.iter().map(Judgment::confidence))
                .chain(p.human_individual.iter().map(Judgment::confidence));
            for c in confs {
                invariant((0.0..=1.0).contains(&c), || format!("item `{}`: confidence {c} outside [0,1]", p.item_id))?;
            }
        }
    }
    let q = &analysis.oracle.quadrants;
    let o = &analysis.oracle.overall;
    invariant(q.total() == o.n && q.oracle_correct() == o.oracle_correct, || {
        "quadrant counts disagree with the oracle row".to_string()
    })?;
    invariant(o.oracle_correct >= o.ai_correct.max(o.human_correct), || {
        "oracle accuracy below one of its sides".to_string()
    })?;
    for h in &routed.hybrid {
        let r = &h.report.overall;
        let label = format!("{} / {} / {}", h.kind, h.condition, h.mode);
        invariant(r.correct <= h.oracle_correct, || {
            format!("{label}: hybrid correct {} exceeds oracle {}", r.correct, h.oracle_correct)
        })?;
        let rows_n: usize = h.report.per_dataset.iter().map(|d| d.n).sum();
        let rows_correct: usize = h.report.per_dataset.iter().map(|d| d.correct).sum();
        invariant(rows_n == r.n && rows_correct == r.correct, || {
            format!("{label}: dataset rows do not add up to the overall row")
        })?;
        if h.condition == Condition::Baseline && h.mode == Mode::Majority {
            invariant(r.ai_correct == q.ai_correct() && r.human_correct == q.human_correct(), || {
                format!("{label}: AI/human counts differ from the baseline quadrants")
            })?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// persistence and orchestration

pub const INGEST_FILE: &str = "ingest.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const ROUTE_FILE: &str = "routing.json";
pub const ANALYSIS_FILE: &str = "analysis.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Where a run keeps its stage outputs.
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Workspace {
            dir: config.output_dir()?.join(ARTIFACT_DIR),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn save<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        write_json(&self.path(file), value)
    }

    /// Loads a stage output, refusing one produced under another config.
    pub fn load<T: DeserializeOwned + HasHash>(&self, file: &str, config: &RunConfig) -> Result<T> {
        let path = self.path(file);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "{} not found; run the earlier stages first",
                path.display()
            )));
        }
        let value: T = read_json(&path)?;
        if value.hash() != analysis_hash(config) {
            return Err(Error::Config(format!(
                "{} was produced under a different configuration; rerun the earlier stages",
                path.display()
            )));
        }
        Ok(value)
    }
}

pub trait HasHash {
    fn hash(&self) -> &str;
}

macro_rules! has_hash {
    ($($t:ty),*) => {$(
        impl HasHash for $t {
            fn hash(&self) -> &str {
                &self.analysis_hash
            }
        }
    )*};
}
has_hash!(IngestArtifact, CalibrationArtifact, RouteArtifact, AnalysisArtifact);

/// All four stage outputs of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutputs {
    pub ingest: IngestArtifact,
    pub calibration: CalibrationArtifact,
    pub routing: RouteArtifact,
    pub analysis: AnalysisArtifact,
}

/// Runs every stage in memory, tagging errors with the failing stage.
pub fn run_stages(config: &RunConfig, resolved: &Resolved) -> Result<RunOutputs> {
    let ingest = ingest(config, resolved).map_err(|e| e.in_stage("ingest"))?;
    let calibration = calibrate(config, resolved, &ingest).map_err(|e| e.in_stage("calibrate"))?;
    let routing = route(config, resolved, &ingest, &calibration).map_err(|e| e.in_stage("route"))?;
    let analysis = analyze(config, resolved, &ingest, &calibration, &routing).map_err(|e| e.in_stage("analyze"))?;
    check_invariants(&ingest, &calibration, &routing, &analysis).map_err(|e| e.in_stage("invariants"))?;
    Ok(RunOutputs {
        ingest,
        calibration,
        routing,
        analysis,
    })
}

/// Validates the config, runs every stage, persists the stage outputs and
/// writes the report bundle to the output directory.
pub fn run_pipeline(config: &RunConfig) -> Result<ReportBundle> {
    let resolved = config.validate()?;
    let outputs = run_stages(config, &resolved)?;
    let ws = Workspace::new(config)?;
    ws.save(INGEST_FILE, &outputs.ingest)?;
    ws.save(CALIBRATION_FILE, &outputs.calibration)?;
    ws.save(ROUTE_FILE, &outputs.routing)?;
    ws.save(ANALYSIS_FILE, &outputs.analysis)?;
    let bundle = build_bundle(config, &resolved, &outputs);
    emit_report(&bundle, &config.output_dir()?, &resolved.formats).map_err(|e| e.in_stage("report"))?;
    Ok(bundle)
}

/// One CLI-addressable step. Every step but `Ingest` and `All` reads the
/// outputs of the steps before it from the artifact directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Calibrate,
    Route,
    Analyze,
    Report,
    All,
}

/// Runs a single stage and returns a short human-readable summary.
pub fn run_stage(config: &RunConfig, stage: Stage) -> Result<String> {
    let resolved = config.validate()?;
    let ws = Workspace::new(config)?;
    match stage {
        Stage::Ingest => {
            let a = ingest(config, &resolved).map_err(|e| e.in_stage("ingest"))?;
            ws.save(INGEST_FILE, &a)?;
            let s = &a.summary;
            Ok(format!(
                "{} items in {} datasets ({} groups): {} calibration, {} test; {} AI and {} human responses kept, {} dropped by cap, {} unresolvable",
                s.items,
                s.items_per_dataset.len(),
                s.groups.len(),
                s.calibration_items,
                s.test_items,
                s.ai_responses,
                s.human_responses.values().sum::<usize>(),
                s.dropped_by_cap,
                s.unresolvable_answers
            ))
        }
        Stage::Calibrate => {
            let i: IngestArtifact = ws.load(INGEST_FILE, config)?;
            let c = calibrate(config, &resolved, &i).map_err(|e| e.in_stage("calibrate"))?;
            ws.save(CALIBRATION_FILE, &c)?;
            let chosen = c
                .metrics
                .iter()
                .find(|m| m.side == "ai" && m.calibrator == resolved.calibrator);
            Ok(match chosen {
                Some(m) => format!(
                    "ai {} {}: test ECE {:.3}, Brier {:.3}",
                    m.confidence_method,
                    m.calibrator,
                    m.ece.unwrap_or(f64::NAN),
                    m.brier.unwrap_or(f64::NAN)
                ),
                None => "calibration maps fitted".into(),
            })
        }
        Stage::Route => {
            let i: IngestArtifact = ws.load(INGEST_FILE, config)?;
            let c: CalibrationArtifact = ws.load(CALIBRATION_FILE, config)?;
            let r = route(config, &resolved, &i, &c).map_err(|e| e.in_stage("route"))?;
            ws.save(ROUTE_FILE, &r)?;
            let lines: Vec<String> = r
                .hybrid
                .iter()
                .map(|h| {
                    format!(
                        "{:>3} {:<10} {:<10} {:.1}%",
                        h.kind.short(),
                        h.condition.as_str(),
                        h.mode.as_str(),
                        100.0 * h.report.overall.accuracy()
                    )
                })
                .collect();
            Ok(lines.join("\n"))
        }
        Stage::Analyze => {
            let i: IngestArtifact = ws.load(INGEST_FILE, config)?;
            let c: CalibrationArtifact = ws.load(CALIBRATION_FILE, config)?;
            let r: RouteArtifact = ws.load(ROUTE_FILE, config)?;
            let a = analyze(config, &resolved, &i, &c, &r).map_err(|e| e.in_stage("analyze"))?;
            check_invariants(&i, &c, &r, &a).map_err(|e| e.in_stage("invariants"))?;
            ws.save(ANALYSIS_FILE, &a)?;
            let o = &a.oracle.overall;
            Ok(format!(
                "oracle {:.1}%, AI {:.1}%, human {:.1}%, headroom {:+.1}pp",
                100.0 * o.oracle_accuracy(),
                100.0 * o.ai_accuracy(),
                100.0 * o.human_accuracy(),
                100.0 * o.headroom()
            ))
        }
        Stage::Report => {
            let outputs = RunOutputs {
                ingest: ws.load(INGEST_FILE, config)?,
                calibration: ws.load(CALIBRATION_FILE, config)?,
                routing: ws.load(ROUTE_FILE, config)?,
                analysis: ws.load(ANALYSIS_FILE, config)?,
            };
            let bundle = build_bundle(config, &resolved, &outputs);
            let files = emit_report(&bundle, &config.output_dir()?, &resolved.formats).map_err(|e| e.in_stage("report"))?;
            Ok(format!("wrote {} files to {}", files.len(), config.output_dir()?.display()))
        }
        Stage::All => {
            let bundle = run_pipeline(config)?;
            Ok(format!(
                "wrote {} tables and {} reliability curves to {}",
                bundle.tables.len(),
                bundle.reliability.len(),
                config.output_dir()?.display()
            ))
        }
    }
}
