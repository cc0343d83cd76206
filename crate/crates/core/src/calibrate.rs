//! Post-hoc calibration maps and the scores used to compare them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A confidence score and whether the judgment it belongs to was correct.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: bool,
}

impl ScoredPair {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredPair { score, label }
    }

    fn y(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Which calibrator to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    Identity,
    Isotonic,
    Platt,
    Temperature,
    Histogram,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 5] = [
        CalibratorKind::Identity,
        CalibratorKind::Isotonic,
        CalibratorKind::Platt,
        CalibratorKind::Temperature,
        CalibratorKind::Histogram,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CalibratorKind::Identity => "identity",
            CalibratorKind::Isotonic => "isotonic",
            CalibratorKind::Platt => "platt",
            CalibratorKind::Temperature => "temperature",
            CalibratorKind::Histogram => "histogram",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        CalibratorKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown calibrator `{name}`")))
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fitted transform parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CalibrationParams {
    Identity,
    /// `(score, value)` at both ends of every pooled block. Scores strictly
    /// increase, values never decrease; queries interpolate linearly.
    Isotonic { knots: Vec<(f64, f64)> },
    /// `p = sigmoid(a * score + b)`
    Platt { a: f64, b: f64 },
    /// `p = sigmoid(logit(clamp(score, eps, 1 - eps)) / temperature)`
    Temperature { temperature: f64, epsilon: f64 },
    /// Equal-width bins over `[0, 1]`; `values[i]` applies to bin `i`.
    Histogram { edges: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub side: String,
    pub confidence_method: String,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub params: CalibrationParams,
    pub training_count: usize,
    #[serde(default)]
    pub meta: CalibrationMeta,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            params: CalibrationParams::Identity,
            training_count: 0,
            meta: CalibrationMeta::default(),
        }
    }

    pub fn kind(&self) -> CalibratorKind {
        match self.params {
            CalibrationParams::Identity => CalibratorKind::Identity,
            CalibrationParams::Isotonic { .. } => CalibratorKind::Isotonic,
            CalibrationParams::Platt { .. } => CalibratorKind::Platt,
            CalibrationParams::Temperature { .. } => CalibratorKind::Temperature,
            CalibrationParams::Histogram { .. } => CalibratorKind::Histogram,
        }
    }

    pub fn with_meta(mut self, meta: CalibrationMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_calibrator(self, score)
    }
}

pub const TEMPERATURE_EPSILON: f64 = 1e-6;
const PLATT_RIDGE: f64 = 1e-6;
const PLATT_MAX_ITER: usize = 100;
const PLATT_STEP_TOL: f64 = 1e-8;
const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
const TEMPERATURE_TOL: f64 = 1e-6;
pub const HISTOGRAM_BINS: usize = 10;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Negative log-likelihood of labels under `sigmoid(z)`.
fn logistic_nll<'a>(pairs: impl Iterator<Item = (f64, &'a ScoredPair)>) -> f64 {
    pairs
        .map(|(z, p)| if p.label { softplus(-z) } else { softplus(z) })
        .sum()
}

pub fn fit_calibrator(pairs: &[ScoredPair], kind: CalibratorKind) -> Result<CalibrationMap> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    if let Some(bad) = pairs.iter().find(|p| !(0.0..=1.0).contains(&p.score)) {
        return Err(Error::InvalidInput(format!("score {} outside [0,1]", bad.score)));
    }
    let needs_both = matches!(kind, CalibratorKind::Platt | CalibratorKind::Temperature);
    if needs_both {
        let first = pairs[0].label;
        if pairs.iter().all(|p| p.label == first) {
            return Err(Error::DegenerateLabels(first));
        }
    }
    let params = match kind {
        CalibratorKind::Identity => CalibrationParams::Identity,
        CalibratorKind::Isotonic => CalibrationParams::Isotonic {
            knots: isotonic_knots(pairs),
        },
        CalibratorKind::Platt => {
            let (a, b) = fit_platt(pairs);
            CalibrationParams::Platt { a, b }
        }
        CalibratorKind::Temperature => CalibrationParams::Temperature {
            temperature: fit_temperature(pairs),
            epsilon: TEMPERATURE_EPSILON,
        },
        CalibratorKind::Histogram => fit_histogram(pairs, HISTOGRAM_BINS),
    };
    Ok(CalibrationMap {
        params,
        training_count: pairs.len(),
        meta: CalibrationMeta::default(),
    })
}

/// A pooled run of consecutive points with its weighted mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    pub mean: f64,
    pub weight: f64,
}

/// Weighted pool-adjacent-violators over `values` (already in x order).
///
/// Returns blocks covering `0..values.len()` with non-decreasing means.
pub fn pool_adjacent_violators(values: &[f64], weights: &[f64]) -> Vec<Block> {
    assert_eq!(values.len(), weights.len());
    let mut blocks: Vec<Block> = Vec::with_capacity(values.len());
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        let mut cur = Block {
            start: i,
            end: i + 1,
            mean: v,
            weight: w,
        };
        while let Some(prev) = blocks.last() {
            if prev.mean <= cur.mean {
                break;
            }
            let prev = blocks.pop().unwrap();
            let weight = prev.weight + cur.weight;
            cur = Block {
                start: prev.start,
                end: cur.end,
                mean: (prev.mean * prev.weight + cur.mean * cur.weight) / weight,
                weight,
            };
        }
        blocks.push(cur);
    }
    blocks
}

/// Distinct scores in ascending order with their label sums and counts.
pub(crate) fn pool_ties(pairs: &[ScoredPair]) -> Vec<(f64, f64, f64)> {
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some(last) if last.0 == p.score => {
                last.1 += p.y();
                last.2 += 1.0;
            }
            _ => out.push((p.score, p.y(), 1.0)),
        }
    }
    out
}

fn isotonic_knots(pairs: &[ScoredPair]) -> Vec<(f64, f64)> {
    let tied = pool_ties(pairs);
    let means: Vec<f64> = tied.iter().map(|t| t.1 / t.2).collect();
    let weights: Vec<f64> = tied.iter().map(|t| t.2).collect();
    let mut knots = Vec::new();
    for b in pool_adjacent_violators(&means, &weights) {
        knots.push((tied[b.start].0, b.mean));
        if b.end - b.start > 1 {
            knots.push((tied[b.end - 1].0, b.mean));
        }
    }
    knots
}

fn fit_platt(pairs: &[ScoredPair]) -> (f64, f64) {
    let nll = |a: f64, b: f64| logistic_nll(pairs.iter().map(|p| (a * p.score + b, p)));
    let (mut a, mut b) = (0.0, 0.0);
    let mut current = nll(a, b);
    for _ in 0..PLATT_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, PLATT_RIDGE, 0.0, PLATT_RIDGE);
        for p in pairs {
            let q = sigmoid(a * p.score + b);
            let r = q - p.y();
            let w = q * (1.0 - q);
            ga += r * p.score;
            gb += r;
            haa += w * p.score * p.score;
            hab += w * p.score;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if det <= 0.0 || !det.is_finite() {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        // Halve the Newton step until the likelihood does not get worse.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (a - scale * da, b - scale * db);
            let candidate = nll(na, nb);
            if candidate <= current {
                a = na;
                b = nb;
                current = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || (scale * da).abs().max((scale * db).abs()) < PLATT_STEP_TOL {
            break;
        }
    }
    (a, b)
}

fn fit_temperature(pairs: &[ScoredPair]) -> f64 {
    let logits: Vec<f64> = pairs
        .iter()
        .map(|p| logit(p.score.clamp(TEMPERATURE_EPSILON, 1.0 - TEMPERATURE_EPSILON)))
        .collect();
    let nll = |t: f64| logistic_nll(logits.iter().zip(pairs).map(|(z, p)| (z / t, p)));
    golden_section_min(nll, TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1, TEMPERATURE_TOL)
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    (lo + hi) / 2.0
}

/// Equal-width bin of `score`: `floor(score * bins)`, capped at `bins - 1`.
pub fn bin_index(score: f64, bins: usize) -> usize {
    ((score * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

fn fit_histogram(pairs: &[ScoredPair], bins: usize) -> CalibrationParams {
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for p in pairs {
        let b = bin_index(p.score, bins);
        sums[b] += p.y();
        counts[b] += 1;
    }
    let filled: Vec<usize> = (0..bins).filter(|&b| counts[b] > 0).collect();
    let values = (0..bins)
        .map(|b| {
            // nearest non-empty bin; the lower one wins a distance tie
            let src = *filled
                .iter()
                .min_by_key(|&&f| (f.abs_diff(b), f))
                .expect("at least one pair");
            sums[src] / counts[src] as f64
        })
        .collect();
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    CalibrationParams::Histogram { edges, values }
}

pub fn apply_calibrator(map: &CalibrationMap, score: f64) -> f64 {
    let out = match &map.params {
        CalibrationParams::Identity => score,
        CalibrationParams::Isotonic { knots } => interpolate(knots, score),
        CalibrationParams::Platt { a, b } => sigmoid(a * score + b),
        CalibrationParams::Temperature {
            temperature,
            epsilon,
        } => sigmoid(logit(score.clamp(*epsilon, 1.0 - epsilon)) / temperature),
        CalibrationParams::Histogram { values, .. } => values[bin_index(score, values.len())],
    };
    out.clamp(0.0, 1.0)
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|k| k.0 <= x);
    let (x0, y0) = knots[hi - 1];
    let (x1, y1) = knots[hi];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

// ---------------------------------------------------------------------------
// scoring

pub fn brier(pairs: &[ScoredPair]) -> f64 {
    pairs.iter().map(|p| (p.score - p.y()).powi(2)).sum::<f64>() / pairs.len() as f64
}

/// One point of a reliability diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub bin_mean_score: f64,
    pub bin_accuracy: f64,
    pub bin_count: usize,
}

/// Non-empty equal-width bins, lowest first.
pub fn reliability_curve(pairs: &[ScoredPair], bins: usize) -> Vec<ReliabilityPoint> {
    let bins = bins.max(1);
    let mut score_sum = vec![0.0; bins];
    let mut label_sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for p in pairs {
        let b = bin_index(p.score, bins);
        score_sum[b] += p.score;
        label_sum[b] += p.y();
        count[b] += 1;
    }
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| ReliabilityPoint {
            bin_mean_score: score_sum[b] / count[b] as f64,
            bin_accuracy: label_sum[b] / count[b] as f64,
            bin_count: count[b],
        })
        .collect()
}

/// Expected calibration error over `bins` equal-width bins, sample weighted.
pub fn ece(pairs: &[ScoredPair], bins: usize) -> f64 {
    let n = pairs.len() as f64;
    reliability_curve(pairs, bins)
        .iter()
        .map(|pt| pt.bin_count as f64 / n * (pt.bin_mean_score - pt.bin_accuracy).abs())
        .sum()
}

/// Mann-Whitney AUROC with half credit for ties; `None` unless both labels occur.
pub fn auroc(pairs: &[ScoredPair]) -> Option<f64> {
    let positives = pairs.iter().filter(|p| p.label).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
    // it stays an integer.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let doubled_rank = (i + 1 + j) as u64;
        let pos_in_run = sorted[i..j].iter().filter(|p| p.label).count() as u64;
        doubled_rank_sum += doubled_rank * pos_in_run;
        i = j;
    }
    let p = positives as u64;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Some(doubled_u as f64 / (2 * positives * negatives) as f64)
}
