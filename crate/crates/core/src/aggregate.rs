//! Turning a bag of responses for one item into a single verdict.
//!
//! Responses are clustered by answer equivalence, the largest cluster wins
//! (ties: higher mean confidence, then the smaller canonical answer), and a
//! raw confidence is attached. The same winning cluster feeds both the answer
//! and every majority-based confidence signal.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, AnswerKind, CanonicalAnswer, Condition, Item, Response, Side};
use crate::error::{Error, Result};

/// Decides whether two canonical answers mean the same thing.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum EquivalenceOracle {
    /// Equal canonical forms only.
    #[default]
    NormalizedExact,
    /// Equal canonical forms, plus text pairs adjudicated as equivalent.
    Adjudicated(AdjudicationTable),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdjudicationTable {
    equivalent: HashSet<(String, String)>,
}

#[derive(Deserialize)]
struct AdjudicationRecord {
    a: String,
    b: String,
    equivalent: bool,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl AdjudicationTable {
    /// Adds an adjudicated pair. Both texts are normalized first; pairs
    /// marked distinct are ignored since they cannot override equality.
    pub fn insert(&mut self, a: &str, b: &str, equivalent: bool) {
        if equivalent {
            let a = crate::corpus::normalize_text(a);
            let b = crate::corpus::normalize_text(b);
            self.equivalent.insert(ordered(&a, &b));
        }
    }

    /// Reads `{"a": .., "b": .., "equivalent": bool}` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let mut table = AdjudicationTable::default();
        read_jsonl(path, |_, rec: AdjudicationRecord| {
            table.insert(&rec.a, &rec.b, rec.equivalent);
            Ok(())
        })?;
        Ok(table)
    }

    fn contains(&self, a: &str, b: &str) -> bool {
        self.equivalent.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.equivalent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equivalent.is_empty()
    }
}

impl EquivalenceOracle {
    pub fn equivalent(&self, a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
        if a == b {
            return true;
        }
        match (self, a, b) {
            (
                EquivalenceOracle::Adjudicated(table),
                CanonicalAnswer::NormalizedText(x),
                CanonicalAnswer::NormalizedText(y),
            ) => table.contains(x, y),
            _ => false,
        }
    }

    /// Unresolvable answers are never correct, even against each other.
    pub fn matches_gold(&self, answer: &CanonicalAnswer, gold: &CanonicalAnswer) -> bool {
        answer.is_resolved() && self.equivalent(answer, gold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster<'a> {
    pub representative: &'a CanonicalAnswer,
    pub members: Vec<&'a Response>,
}

impl Cluster<'_> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn confidence_sum(&self) -> f64 {
        self.members.iter().map(|r| r.confidence).sum()
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidence_sum() / self.members.len() as f64
    }
}

/// Clusters ordered by size (desc), mean confidence (desc), representative (asc).
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSet<'a> {
    pub clusters: Vec<Cluster<'a>>,
    pub total: usize,
}

impl<'a> ClusterSet<'a> {
    pub fn winner(&self) -> &Cluster<'a> {
        &self.clusters[0]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::len).collect()
    }
}

/// Greedy single-pass clustering.
///
/// Responses are visited in identity order (AI sample index, then human
/// participant id) and each joins the first cluster whose representative it
/// is equivalent to, else opens a new one.
pub fn cluster_responses<'a>(
    responses: &[&'a Response],
    oracle: &EquivalenceOracle,
) -> Result<ClusterSet<'a>> {
    let Some(first) = responses.first() else {
        return Err(Error::InvalidInput("cannot cluster an empty response list".into()));
    };
    if let Some(other) = responses.iter().find(|r| r.item_id != first.item_id) {
        return Err(Error::InvalidInput(format!(
            "responses for `{}` and `{}` cannot be clustered together",
            first.item_id, other.item_id
        )));
    }
    let mut ordered: Vec<&'a Response> = responses.to_vec();
    ordered.sort_by(|a, b| a.side.cmp(&b.side));

    let mut clusters: Vec<Cluster<'a>> = Vec::new();
    for r in ordered {
        match clusters
            .iter_mut()
            .find(|c| oracle.equivalent(c.representative, &r.canonical))
        {
            Some(c) => c.members.push(r),
            None => clusters.push(Cluster {
                representative: &r.canonical,
                members: vec![r],
            }),
        }
    }
    clusters.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| b.mean_confidence().total_cmp(&a.mean_confidence()))
            .then_with(|| a.representative.cmp(b.representative))
    });
    Ok(ClusterSet {
        total: responses.len(),
        clusters,
    })
}

pub fn select_majority<'a>(clusters: &ClusterSet<'a>) -> (&'a CanonicalAnswer, usize) {
    let w = clusters.winner();
    (w.representative, w.len())
}

/// Mean self-reported confidence of the winning cluster.
pub fn direct_ask_confidence(clusters: &ClusterSet<'_>) -> f64 {
    clusters.winner().mean_confidence()
}

/// Entropy of the cluster-size distribution divided by `ln k`; zero for a
/// single cluster.
pub fn normalized_entropy(clusters: &ClusterSet<'_>) -> f64 {
    let k = clusters.clusters.len();
    if k < 2 {
        return 0.0;
    }
    if clusters.clusters.iter().all(|c| c.len() == clusters.clusters[0].len()) {
        // exactly ln k / ln k; the float sum can land a few ulps off
        return 1.0;
    }
    let n = clusters.total as f64;
    let h: f64 = clusters
        .clusters
        .iter()
        .map(|c| {
            let p = c.len() as f64 / n;
            -p * p.ln()
        })
        .sum();
    (h / (k as f64).ln()).clamp(0.0, 1.0)
}

/// Agreement fraction for multiple-choice items, `1 - normalized entropy`
/// for free text.
pub fn computed_confidence(clusters: &ClusterSet<'_>, kind: AnswerKind) -> f64 {
    match kind {
        AnswerKind::MultipleChoice { .. } => clusters.winner().len() as f64 / clusters.total as f64,
        AnswerKind::FreeText => 1.0 - normalized_entropy(clusters),
    }
}

/// Named raw confidence signals computed from an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    MeanConf,
    MedianConf,
    MinConf,
    MaxConf,
    AgreementRate,
    PredictionEntropy,
    CwAgreement,
    Composite,
    Top2Gap,
    FracHighConf,
    MeanConfMajority,
    MajorityVoteConf,
}

impl Signal {
    pub const ALL: [Signal; 12] = [
        Signal::MeanConf,
        Signal::MedianConf,
        Signal::MinConf,
        Signal::MaxConf,
        Signal::AgreementRate,
        Signal::PredictionEntropy,
        Signal::CwAgreement,
        Signal::Composite,
        Signal::Top2Gap,
        Signal::FracHighConf,
        Signal::MeanConfMajority,
        Signal::MajorityVoteConf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Signal::MeanConf => "mean_conf",
            Signal::MedianConf => "median_conf",
            Signal::MinConf => "min_conf",
            Signal::MaxConf => "max_conf",
            Signal::AgreementRate => "agreement_rate",
            Signal::PredictionEntropy => "prediction_entropy",
            Signal::CwAgreement => "cw_agreement",
            Signal::Composite => "composite",
            Signal::Top2Gap => "top2_gap",
            Signal::FracHighConf => "frac_high_conf",
            Signal::MeanConfMajority => "mean_conf_majority",
            Signal::MajorityVoteConf => "majority_vote_conf",
        }
    }

    pub fn from_name(name: &str) -> Option<Signal> {
        Signal::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalOptions {
    /// Confidence at or above which a response counts as high-confidence.
    pub high_conf_threshold: f64,
}

impl Default for SignalOptions {
    fn default() -> Self {
        SignalOptions {
            high_conf_threshold: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    values: [f64; 12],
}

impl SignalVector {
    pub fn get(&self, signal: Signal) -> f64 {
        self.values[Signal::ALL.iter().position(|s| *s == signal).unwrap()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Signal, f64)> + '_ {
        Signal::ALL.into_iter().zip(self.values.iter().copied())
    }
}

pub fn ensemble_signals(clusters: &ClusterSet<'_>, options: SignalOptions) -> SignalVector {
    let mut confs: Vec<f64> = clusters
        .clusters
        .iter()
        .flat_map(|c| c.members.iter().map(|r| r.confidence))
        .collect();
    confs.sort_by(f64::total_cmp);
    let n = confs.len() as f64;
    let mean = confs.iter().sum::<f64>() / n;
    let mid = confs.len() / 2;
    let median = if confs.len() % 2 == 1 {
        confs[mid]
    } else {
        (confs[mid - 1] + confs[mid]) / 2.0
    };
    let winner = clusters.winner();
    let agreement = winner.len() as f64 / n;
    let total_conf: f64 = confs.iter().sum();
    let cw_agreement = if total_conf > 0.0 {
        winner.confidence_sum() / total_conf
    } else {
        0.0
    };
    let second = clusters.clusters.get(1).map_or(0, Cluster::len) as f64;
    let high = confs.iter().filter(|&&c| c >= options.high_conf_threshold).count() as f64;
    let direct = winner.mean_confidence();

    let mut values = [0.0; 12];
    for (slot, signal) in values.iter_mut().zip(Signal::ALL) {
        *slot = match signal {
            Signal::MeanConf => mean,
            Signal::MedianConf => median,
            Signal::MinConf => confs[0],
            Signal::MaxConf => confs[confs.len() - 1],
            Signal::AgreementRate => agreement,
            Signal::PredictionEntropy => normalized_entropy(clusters),
            Signal::CwAgreement => cw_agreement,
            Signal::Composite => agreement * mean,
            Signal::Top2Gap => (winner.len() as f64 - second) / n,
            Signal::FracHighConf => high / n,
            Signal::MeanConfMajority | Signal::MajorityVoteConf => direct,
        };
    }
    SignalVector { values }
}

/// How the raw confidence of a [`Judgment`] is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMethod {
    DirectAsk,
    Computed,
    Signal(Signal),
}

impl ConfidenceMethod {
    pub fn name(&self) -> String {
        match self {
            ConfidenceMethod::DirectAsk => "direct_ask".into(),
            ConfidenceMethod::Computed => "computed".into(),
            ConfidenceMethod::Signal(s) => s.name().into(),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "direct_ask" | "direct" => Ok(ConfidenceMethod::DirectAsk),
            "computed" => Ok(ConfidenceMethod::Computed),
            other => Signal::from_name(other)
                .map(ConfidenceMethod::Signal)
                .ok_or_else(|| Error::Config(format!("unknown confidence method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSide {
    Ai,
    Human(Condition),
}

/// Aggregated verdict of one side on one item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: String,
    pub side: JudgmentSide,
    /// Set for single-participant judgments.
    pub participant_id: Option<String>,
    pub answer: CanonicalAnswer,
    pub supporters: usize,
    pub total: usize,
    pub raw_confidence: f64,
    pub calibrated_confidence: Option<f64>,
    pub correct: bool,
}

impl Judgment {
    /// Calibrated confidence when available, raw otherwise.
    pub fn confidence(&self) -> f64 {
        self.calibrated_confidence.unwrap_or(self.raw_confidence)
    }
}

fn side_of(responses: &[&Response]) -> Result<JudgmentSide> {
    let side = match &responses[0].side {
        Side::Ai { .. } => JudgmentSide::Ai,
        Side::Human { condition, .. } => JudgmentSide::Human(*condition),
    };
    let consistent = responses.iter().all(|r| match (&r.side, side) {
        (Side::Ai { .. }, JudgmentSide::Ai) => true,
        (Side::Human { condition, .. }, JudgmentSide::Human(c)) => *condition == c,
        _ => false,
    });
    if !consistent {
        return Err(Error::InvalidInput(format!(
            "item `{}`: responses mix sides or conditions",
            responses[0].item_id
        )));
    }
    Ok(side)
}

/// Aggregates one side's responses to `item` into a [`Judgment`].
pub fn judge(
    item: &Item,
    responses: &[&Response],
    oracle: &EquivalenceOracle,
    method: ConfidenceMethod,
    options: SignalOptions,
) -> Result<Judgment> {
    if responses.is_empty() {
        return Err(Error::InvalidInput(format!("item `{}`: no responses to judge", item.item_id)));
    }
    if let Some(r) = responses.iter().find(|r| r.item_id != item.item_id) {
        return Err(Error::InvalidInput(format!(
            "response for `{}` passed to judge `{}`",
            r.item_id, item.item_id
        )));
    }
    let side = side_of(responses)?;
    let clusters = cluster_responses(responses, oracle)?;
    let (answer, supporters) = select_majority(&clusters);
    let raw_confidence = match method {
        ConfidenceMethod::DirectAsk => direct_ask_confidence(&clusters),
        ConfidenceMethod::Computed => computed_confidence(&clusters, item.kind),
        ConfidenceMethod::Signal(s) => ensemble_signals(&clusters, options).get(s),
    };
    Ok(Judgment {
        item_id: item.item_id.clone(),
        side,
        participant_id: None,
        correct: oracle.matches_gold(answer, &item.gold),
        answer: answer.clone(),
        supporters,
        total: clusters.total,
        raw_confidence,
        calibrated_confidence: None,
    })
}

/// One singleton judgment per human response, keyed by participant.
pub fn individual_judgments(item: &Item, responses: &[&Response], oracle: &EquivalenceOracle) -> Vec<Judgment> {
    let mut ordered = responses.to_vec();
    ordered.sort_by(|a, b| a.side.cmp(&b.side));
    ordered
        .into_iter()
        .filter_map(|r| match &r.side {
            Side::Human { condition, participant_id } => Some(Judgment {
                item_id: item.item_id.clone(),
                side: JudgmentSide::Human(*condition),
                participant_id: Some(participant_id.clone()),
                answer: r.canonical.clone(),
                supporters: 1,
                total: 1,
                raw_confidence: r.confidence,
                calibrated_confidence: None,
                correct: oracle.matches_gold(&r.canonical, &item.gold),
            }),
            Side::Ai { .. } => None,
        })
        .collect()
}
