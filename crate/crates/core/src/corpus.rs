//! Items, responses, answer canonicalization and the deterministic
//! partitioning rules (calibration/test split, human response capping).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;

/// Group label shared by the three deception-detection datasets.
pub const DECEPTION_GROUP: &str = "deception";

const DECEPTION_DATASETS: [&str; 3] = ["hiddenagenda", "shadearena", "weboflies"];

fn dataset_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum CanonicalAnswer {
    /// 1-based option index of a multiple-choice item.
    Option(u32),
    NormalizedText(String),
    /// A multiple-choice answer that named no valid option. Never correct.
    Unresolvable(String),
}

impl CanonicalAnswer {
    pub fn is_resolved(&self) -> bool {
        !matches!(self, CanonicalAnswer::Unresolvable(_))
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalAnswer::Option(i) => write!(f, "Option {i}"),
            CanonicalAnswer::NormalizedText(t) => f.write_str(t),
            CanonicalAnswer::Unresolvable(t) => write!(f, "<unresolvable: {t}>"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerKind {
    #[serde(rename = "MC")]
    MultipleChoice { option_count: u32 },
    #[serde(rename = "FT")]
    FreeText,
}

impl AnswerKind {
    pub fn label(&self) -> &'static str {
        match self {
            AnswerKind::MultipleChoice { .. } => "MC",
            AnswerKind::FreeText => "FT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub dataset: String,
    /// Dataset group used for threshold learning.
    pub group: String,
    pub kind: AnswerKind,
    /// Option texts for multiple-choice items, in option order. May be empty.
    pub options: Vec<String>,
    pub gold: CanonicalAnswer,
    pub context_ref: Option<String>,
}

/// Experimental condition a human response was collected under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Top2,
    Delegation,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::Top2, Condition::Delegation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Top2 => "top2",
            Condition::Delegation => "delegation",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "top2" | "top-2" => Ok(Condition::Top2),
            "delegation" => Ok(Condition::Delegation),
            other => Err(Error::Config(format!("unknown condition `{other}`"))),
        }
    }
}

/// Who produced a response. Ordering puts AI samples first (by index), then
/// human responses by condition and participant id.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Ai { sample_index: u32 },
    Human { condition: Condition, participant_id: String },
}

impl Side {
    pub fn is_ai(&self) -> bool {
        matches!(self, Side::Ai { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub item_id: String,
    pub side: Side,
    pub raw_answer: String,
    pub canonical: CanonicalAnswer,
    /// Confidence on the unit interval.
    pub confidence: f64,
    /// Confidence as written in the source file (0-100 for human raters).
    pub reported_confidence: f64,
}

impl Response {
    pub fn participant_id(&self) -> Option<&str> {
        match &self.side {
            Side::Human { participant_id, .. } => Some(participant_id),
            Side::Ai { .. } => None,
        }
    }
}

/// Resolves dataset names to threshold-learning groups.
///
/// Explicit entries win; otherwise the deception datasets share
/// [`DECEPTION_GROUP`] (when `merge_deception` is set) and every other dataset
/// is its own group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    pub merge_deception: bool,
    pub overrides: BTreeMap<String, String>,
}

impl Default for GroupMap {
    fn default() -> Self {
        GroupMap {
            merge_deception: true,
            overrides: BTreeMap::new(),
        }
    }
}

impl GroupMap {
    pub fn resolve(&self, dataset: &str) -> String {
        if let Some(group) = self.overrides.get(dataset) {
            return group.clone();
        }
        if self.merge_deception && DECEPTION_DATASETS.contains(&dataset_key(dataset).as_str()) {
            return DECEPTION_GROUP.to_string();
        }
        dataset.to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemSet {
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl ItemSet {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            validate_item(item)?;
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(ItemSet { items, index })
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Item> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn datasets(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.dataset.as_str()).collect()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.group.as_str()).collect()
    }

    /// Items grouped by dataset, each list sorted by item_id.
    pub fn by_dataset(&self) -> BTreeMap<&str, Vec<&Item>> {
        let mut out: BTreeMap<&str, Vec<&Item>> = BTreeMap::new();
        for item in &self.items {
            out.entry(item.dataset.as_str()).or_default().push(item);
        }
        for list in out.values_mut() {
            list.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        }
        out
    }
}

impl<'a> IntoIterator for &'a ItemSet {
    type Item = &'a Item;
    type IntoIter = std::slice::Iter<'a, Item>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

fn validate_item(item: &Item) -> Result<()> {
    let invalid = |message: String| Error::InvalidItem {
        item_id: item.item_id.clone(),
        message,
    };
    match item.kind {
        AnswerKind::MultipleChoice { option_count } => {
            if option_count < 2 {
                return Err(invalid(format!("option_count {option_count} < 2")));
            }
            if !item.options.is_empty() && item.options.len() != option_count as usize {
                return Err(invalid(format!(
                    "{} option texts for option_count {option_count}",
                    item.options.len()
                )));
            }
            match item.gold {
                CanonicalAnswer::Option(g) if (1..=option_count).contains(&g) => Ok(()),
                CanonicalAnswer::Option(g) => Err(invalid(format!(
                    "gold Option{g} outside 1..={option_count}"
                ))),
                ref other => Err(invalid(format!("gold {other} is not an option index"))),
            }
        }
        AnswerKind::FreeText => match item.gold {
            CanonicalAnswer::NormalizedText(_) => Ok(()),
            ref other => Err(invalid(format!("free-text gold {other} is not text"))),
        },
    }
}

/// Responses kept in canonical order: by item_id, then [`Side`] ordering.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseSet {
    responses: Vec<Response>,
}

impl ResponseSet {
    pub fn new(mut responses: Vec<Response>) -> Self {
        responses.sort_by(|a, b| (&a.item_id, &a.side).cmp(&(&b.item_id, &b.side)));
        ResponseSet { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Response> {
        self.responses.iter()
    }

    pub fn for_item(&self, item_id: &str) -> &[Response] {
        let lo = self
            .responses
            .partition_point(|r| r.item_id.as_str() < item_id);
        let hi = self
            .responses
            .partition_point(|r| r.item_id.as_str() <= item_id);
        &self.responses[lo..hi]
    }

    pub fn ai(&self, item_id: &str) -> Vec<&Response> {
        self.for_item(item_id)
            .iter()
            .filter(|r| r.side.is_ai())
            .collect()
    }

    pub fn human(&self, item_id: &str, condition: Condition) -> Vec<&Response> {
        self.for_item(item_id)
            .iter()
            .filter(|r| matches!(r.side, Side::Human { condition: c, .. } if c == condition))
            .collect()
    }

    pub fn into_vec(self) -> Vec<Response> {
        self.responses
    }
}

/// Collapses free text to its comparison form: trimmed, lower-cased, single
/// spaces, no terminal punctuation, and decimal tokens without a leading `+`
/// or trailing fractional zeros.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut text = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = text
            .trim_end_matches(['.', ',', ';', ':', '!', '?'])
            .trim_end();
        if stripped.len() == text.len() {
            break;
        }
        text = stripped.to_string();
    }
    text.split(' ')
        .map(canonical_number)
        .collect::<Vec<_>>()
        .join(" ")
}

fn canonical_number(token: &str) -> String {
    let (negative, body) = match token.as_bytes().first() {
        Some(b'+') => (false, &token[1..]),
        Some(b'-') => (true, &token[1..]),
        _ => (false, token),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int_part) || frac_part.is_some_and(|f| !digits(f)) {
        return token.to_string();
    }
    let int_part = int_part.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let frac_part = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = String::new();
    if negative && !(int_part == "0" && frac_part.is_empty()) {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    out
}

/// Maps a raw answer to its canonical form for `item`.
///
/// Multiple-choice answers resolve from `Option N`, a bare `N`, or the exact
/// (normalized) text of one option. Anything else is an
/// [`Error::UnresolvableAnswer`].
pub fn canonicalize_answer(raw: &str, item: &Item) -> Result<CanonicalAnswer> {
    match item.kind {
        AnswerKind::FreeText => Ok(CanonicalAnswer::NormalizedText(normalize_text(raw))),
        AnswerKind::MultipleChoice { option_count } => {
            resolve_option(raw, option_count, &item.options)
                .map(CanonicalAnswer::Option)
                .ok_or_else(|| Error::UnresolvableAnswer {
                    item_id: item.item_id.clone(),
                    raw: raw.to_string(),
                })
        }
    }
}

fn resolve_option(raw: &str, option_count: u32, options: &[String]) -> Option<u32> {
    let norm = normalize_text(raw);
    let label = norm
        .strip_prefix("option")
        .map(str::trim_start)
        .unwrap_or(&norm);
    if let Ok(n) = label.parse::<u32>() {
        return (1..=option_count).contains(&n).then_some(n);
    }
    options
        .iter()
        .position(|o| normalize_text(o) == norm)
        .map(|i| i as u32 + 1)
}

/// Canonical form used at ingest: unresolvable multiple-choice answers are
/// kept (and count as wrong) instead of being dropped.
pub fn canonicalize_or_flag(raw: &str, item: &Item) -> CanonicalAnswer {
    canonicalize_answer(raw, item)
        .unwrap_or_else(|_| CanonicalAnswer::Unresolvable(normalize_text(raw)))
}

// ---------------------------------------------------------------------------
// line-delimited record files

#[derive(Debug, Serialize, Deserialize)]
struct ItemRecord {
    item_id: String,
    dataset: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    option_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    options: Vec<String>,
    gold: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResponseRecord {
    item_id: String,
    side: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    participant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<Condition>,
    raw_answer: String,
    confidence: f64,
}

pub(crate) fn read_jsonl<T, F>(path: &Path, mut each: F) -> Result<()>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        each(i + 1, record)?;
    }
    Ok(())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(&record).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads `items.jsonl` with the default group map.
pub fn load_items(path: &Path) -> Result<ItemSet> {
    load_items_with(path, &GroupMap::default())
}

pub fn load_items_with(path: &Path, groups: &GroupMap) -> Result<ItemSet> {
    let mut items = Vec::new();
    let mut seen = HashMap::new();
    read_jsonl(path, |line, rec: ItemRecord| {
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        let kind = match (rec.kind.as_str(), rec.option_count) {
            ("MC", Some(n)) => AnswerKind::MultipleChoice { option_count: n },
            ("MC", None) if !rec.options.is_empty() => AnswerKind::MultipleChoice {
                option_count: rec.options.len() as u32,
            },
            ("MC", None) => return Err(malformed("MC item without option_count".into())),
            ("FT", _) => AnswerKind::FreeText,
            (other, _) => return Err(malformed(format!("unknown kind `{other}`"))),
        };
        let gold = match (&kind, &rec.gold) {
            (AnswerKind::MultipleChoice { .. }, Value::Number(n)) => {
                let g = n
                    .as_u64()
                    .filter(|&g| g <= u32::MAX as u64)
                    .ok_or_else(|| malformed(format!("gold `{n}` is not an option index")))?;
                CanonicalAnswer::Option(g as u32)
            }
            (AnswerKind::MultipleChoice { option_count }, Value::String(s)) => {
                // An unresolvable label is reported as an out-of-range gold below.
                match resolve_option(s, *option_count, &rec.options) {
                    Some(g) => CanonicalAnswer::Option(g),
                    None => {
                        return Err(Error::InvalidItem {
                            item_id: rec.item_id.clone(),
                            message: format!("gold `{s}` is not a valid option"),
                        })
                    }
                }
            }
            (AnswerKind::FreeText, Value::String(s)) => CanonicalAnswer::NormalizedText(normalize_text(s)),
            (AnswerKind::FreeText, Value::Number(n)) => {
                CanonicalAnswer::NormalizedText(normalize_text(&n.to_string()))
            }
            (_, other) => return Err(malformed(format!("unsupported gold value {other}"))),
        };
        if let Some(first) = seen.insert(rec.item_id.clone(), line) {
            let _ = first;
            return Err(Error::DuplicateItem(rec.item_id));
        }
        let item = Item {
            group: groups.resolve(&rec.dataset),
            item_id: rec.item_id,
            dataset: rec.dataset,
            kind,
            options: rec.options,
            gold,
            context_ref: rec.context_ref,
        };
        validate_item(&item)?;
        items.push(item);
        Ok(())
    })?;
    ItemSet::new(items)
}

pub fn write_items(path: &Path, items: &ItemSet) -> Result<()> {
    write_jsonl(
        path,
        items.iter().map(|item| ItemRecord {
            item_id: item.item_id.clone(),
            dataset: item.dataset.clone(),
            kind: item.kind.label().to_string(),
            option_count: match item.kind {
                AnswerKind::MultipleChoice { option_count } => Some(option_count),
                AnswerKind::FreeText => None,
            },
            options: item.options.clone(),
            gold: match &item.gold {
                CanonicalAnswer::Option(g) => Value::from(*g),
                CanonicalAnswer::NormalizedText(t) | CanonicalAnswer::Unresolvable(t) => {
                    Value::from(t.clone())
                }
            },
            context_ref: item.context_ref.clone(),
        }),
    )
}

/// Loads `responses.jsonl`, canonicalizing every answer against its item.
///
/// Human confidences are read on the 0-100 scale and divided by 100.
pub fn load_responses(path: &Path, items: &ItemSet) -> Result<ResponseSet> {
    let mut out = Vec::new();
    let mut keys = BTreeSet::new();
    read_jsonl(path, |line, rec: ResponseRecord| {
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        let item = items
            .get(&rec.item_id)
            .ok_or_else(|| malformed(format!("unknown item_id `{}`", rec.item_id)))?;
        if !rec.confidence.is_finite() {
            return Err(malformed("non-finite confidence".into()));
        }
        let (side, confidence) = match rec.side.as_str() {
            "ai" | "AI" => {
                let sample_index = rec
                    .sample_index
                    .ok_or_else(|| malformed("AI response without sample_index".into()))?;
                if !(0.0..=1.0).contains(&rec.confidence) {
                    return Err(malformed(format!("AI confidence {} outside [0,1]", rec.confidence)));
                }
                (Side::Ai { sample_index }, rec.confidence)
            }
            "human" | "Human" => {
                let participant_id = rec
                    .participant_id
                    .clone()
                    .ok_or_else(|| malformed("human response without participant_id".into()))?;
                if !(0.0..=100.0).contains(&rec.confidence) {
                    return Err(malformed(format!(
                        "human confidence {} outside [0,100]",
                        rec.confidence
                    )));
                }
                let condition = rec.condition.unwrap_or(Condition::Baseline);
                (Side::Human { condition, participant_id }, rec.confidence / 100.0)
            }
            other => return Err(malformed(format!("unknown side `{other}`"))),
        };
        if !keys.insert((rec.item_id.clone(), side.clone())) {
            return Err(malformed(format!("duplicate response {side:?} for `{}`", rec.item_id)));
        }
        out.push(Response {
            canonical: canonicalize_or_flag(&rec.raw_answer, item),
            item_id: rec.item_id,
            side,
            raw_answer: rec.raw_answer,
            confidence,
            reported_confidence: rec.confidence,
        });
        Ok(())
    })?;
    Ok(ResponseSet::new(out))
}

pub fn write_responses(path: &Path, responses: &ResponseSet) -> Result<()> {
    write_jsonl(
        path,
        responses.iter().map(|r| {
            let (side, sample_index, participant_id, condition) = match &r.side {
                Side::Ai { sample_index } => ("ai", Some(*sample_index), None, None),
                Side::Human { condition, participant_id } => {
                    ("human", None, Some(participant_id.clone()), Some(*condition))
                }
            };
            ResponseRecord {
                item_id: r.item_id.clone(),
                side: side.to_string(),
                sample_index,
                participant_id,
                condition,
                raw_answer: r.raw_answer.clone(),
                confidence: r.reported_confidence,
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// partitioning

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fraction: f64,
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, item_id: &str) -> Option<Split> {
        self.assignment.get(item_id).copied()
    }

    pub fn is_calibration(&self, item_id: &str) -> bool {
        self.get(item_id) == Some(Split::Calibration)
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }
}

/// Number of calibration items for a dataset of `n` items.
pub fn calibration_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Stratified calibration/test split.
///
/// Within each dataset the items are sorted by id, shuffled with the stream
/// for `(seed, dataset)`, and the first `round(fraction * n)` go to
/// calibration.
pub fn split_calibration_test(items: &ItemSet, fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0,1)")));
    }
    let mut assignment = BTreeMap::new();
    for (dataset, list) in items.by_dataset() {
        if list.len() < 2 {
            return Err(Error::TooFewToStratify {
                dataset: dataset.to_string(),
                count: list.len(),
            });
        }
        let mut ids: Vec<&str> = list.iter().map(|i| i.item_id.as_str()).collect();
        let mut rng = rng::stream(seed, dataset.as_bytes());
        rng::shuffle(&mut rng, &mut ids);
        let n_cal = calibration_count(fraction, ids.len());
        for (pos, id) in ids.into_iter().enumerate() {
            let split = if pos < n_cal { Split::Calibration } else { Split::Test };
            assignment.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment {
        fraction,
        seed,
        assignment,
    })
}

/// Keeps at most `max_per_item` human responses per item and condition.
///
/// Over-cap groups are reduced by sorting participant ids, shuffling with the
/// stream for `(seed, item_id)` and keeping the first `max_per_item`. AI
/// responses pass through untouched.
pub fn cap_human_responses(responses: &ResponseSet, max_per_item: usize, seed: u64) -> ResponseSet {
    let max_per_item = max_per_item.max(1);
    let mut groups: BTreeMap<(&str, Condition), Vec<&Response>> = BTreeMap::new();
    let mut kept: Vec<Response> = Vec::with_capacity(responses.len());
    for r in responses.iter() {
        match &r.side {
            Side::Ai { .. } => kept.push(r.clone()),
            Side::Human { condition, .. } => groups
                .entry((r.item_id.as_str(), *condition))
                .or_default()
                .push(r),
        }
    }
    for ((item_id, _), mut group) in groups {
        if group.len() > max_per_item {
            group.sort_by(|a, b| a.participant_id().cmp(&b.participant_id()));
            let mut rng = rng::stream(seed, item_id.as_bytes());
            rng::shuffle(&mut rng, &mut group);
            group.truncate(max_per_item);
        }
        kept.extend(group.into_iter().cloned());
    }
    ResponseSet::new(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc_item(id: &str, n: u32, gold: u32) -> Item {
        Item {
            item_id: id.into(),
            dataset: "GPQA Diamond".into(),
            group: "GPQA Diamond".into(),
            kind: AnswerKind::MultipleChoice { option_count: n },
            options: vec![],
            gold: CanonicalAnswer::Option(gold),
            context_ref: None,
        }
    }

    fn ft_item(id: &str) -> Item {
        Item {
            item_id: id.into(),
            dataset: "FACTS_search".into(),
            group: "FACTS_search".into(),
            kind: AnswerKind::FreeText,
            options: vec![],
            gold: CanonicalAnswer::NormalizedText("paris".into()),
            context_ref: None,
        }
    }

    #[test]
    fn mc_labels_resolve() {
        let mut item = mc_item("q", 4, 1);
        assert_eq!(canonicalize_answer("Option 2", &item).unwrap(), CanonicalAnswer::Option(2));
        assert_eq!(canonicalize_answer(" 3 ", &item).unwrap(), CanonicalAnswer::Option(3));
        assert_eq!(canonicalize_answer("option 4.", &item).unwrap(), CanonicalAnswer::Option(4));
        assert!(matches!(
            canonicalize_answer("Option 5", &item),
            Err(Error::UnresolvableAnswer { .. })
        ));
        item.options = vec!["Red".into(), "Green".into(), "Blue".into(), "Black".into()];
        assert_eq!(canonicalize_answer("blue", &item).unwrap(), CanonicalAnswer::Option(3));
        assert!(canonicalize_answer("purple", &item).is_err());
        assert_eq!(
            canonicalize_or_flag("purple", &item),
            CanonicalAnswer::Unresolvable("purple".into())
        );
    }

    #[test]
    fn free_text_normalizes() {
        let item = ft_item("q");
        let a = canonicalize_answer("  Paris. ", &item).unwrap();
        let b = canonicalize_answer("paris", &item).unwrap();
        assert_eq!(a, b);
        assert_eq!(normalize_text("New   York\tCity!?"), "new york city");
    }

    #[test]
    fn numeric_tokens_canonicalize() {
        // Hand-checked pairs: (input, expected normalized form).
        let cases = [
            ("3.50", "3.5"),
            ("3.5", "3.5"),
            ("+3.5", "3.5"),
            ("3.0", "3"),
            ("3.", "3"),
            ("003", "3"),
            ("0.250", "0.25"),
            ("-0.0", "0"),
            ("-2.10", "-2.1"),
            ("+0", "0"),
            ("100", "100"),
            ("100.000", "100"),
            ("1.05", "1.05"),
            ("12.340 km", "12.34 km"),
            ("about 7.70.", "about 7.7"),
            ("1,000", "1,000"),
            ("2.5e3", "2.5e3"),
            ("v1.20", "v1.20"),
            ("0.0001000", "0.0001"),
            ("42!", "42"),
        ];
        for (input, expected) in cases {
            assert_eq!(normalize_text(input), expected, "input {input:?}");
        }
    }

    #[test]
    fn deception_datasets_share_a_group() {
        let g = GroupMap::default();
        assert_eq!(g.resolve("Hidden Agenda"), DECEPTION_GROUP);
        assert_eq!(g.resolve("SHADE-Arena"), DECEPTION_GROUP);
        assert_eq!(g.resolve("web_of_lies"), DECEPTION_GROUP);
        assert_eq!(g.resolve("QuALITY"), "QuALITY");
        let mut custom = GroupMap::default();
        custom.overrides.insert("QuALITY".into(), "reading".into());
        assert_eq!(custom.resolve("QuALITY"), "reading");
    }

    #[test]
    fn invalid_gold_is_rejected() {
        let err = ItemSet::new(vec![mc_item("bad-item", 4, 5)]).unwrap_err();
        assert!(err.to_string().contains("bad-item"), "{err}");
        let err = ItemSet::new(vec![mc_item("a", 4, 1), mc_item("a", 4, 2)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateItem(_)));
    }

    #[test]
    fn split_counts_and_determinism() {
        let items = ItemSet::new((0..10).map(|i| mc_item(&format!("q{i:02}"), 4, 1)).collect()).unwrap();
        let a = split_calibration_test(&items, 0.4, 7).unwrap();
        assert_eq!(a.count(Split::Calibration), 4);
        assert_eq!(a.count(Split::Test), 6);
        assert_eq!(a, split_calibration_test(&items, 0.4, 7).unwrap());
        assert!(split_calibration_test(&items, 1.0, 7).is_err());
        let single = ItemSet::new(vec![mc_item("only", 4, 1)]).unwrap();
        assert!(matches!(
            split_calibration_test(&single, 0.4, 7),
            Err(Error::TooFewToStratify { .. })
        ));
    }

    fn human(item: &str, pid: &str) -> Response {
        Response {
            item_id: item.into(),
            side: Side::Human {
                condition: Condition::Baseline,
                participant_id: pid.into(),
            },
            raw_answer: "1".into(),
            canonical: CanonicalAnswer::Option(1),
            confidence: 0.5,
            reported_confidence: 50.0,
        }
    }

    #[test]
    fn capping_keeps_three_stably() {
        let five: Vec<Response> = ["p5", "p1", "p3", "p2", "p4"].iter().map(|p| human("q", p)).collect();
        let capped = cap_human_responses(&ResponseSet::new(five.clone()), 3, 42);
        assert_eq!(capped.len(), 3);
        let mut reversed = five;
        reversed.reverse();
        assert_eq!(capped, cap_human_responses(&ResponseSet::new(reversed), 3, 42));

        let two: Vec<Response> = ["a", "b"].iter().map(|p| human("q", p)).collect();
        let set = ResponseSet::new(two);
        assert_eq!(cap_human_responses(&set, 3, 42), set);
    }
}
