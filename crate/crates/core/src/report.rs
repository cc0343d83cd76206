//! Report tables and their markdown, CSV and JSON renderings.
//!
//! Markdown shows percentages to one decimal; CSV and JSON carry full
//! precision. File names derive from table ids only, so re-emitting a bundle
//! reproduces the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyze::overreliance::METHOD_NOTE;
use crate::config::{Format, Resolved, RunConfig};
use crate::corpus::Condition;
use crate::error::{Error, Result};
use crate::pipeline::{analysis_hash, config_hash, recorded_config, write_json, InputDigest, ReliabilityCurve, RunOutputs};
use crate::route::{AccuracyRow, Mode, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Cell {
    Text(String),
    Int(u64),
    /// A fraction shown as a percentage.
    Percent(f64),
    /// A difference of fractions shown as signed percentage points.
    Points(f64),
    /// A plain number shown with the given number of decimals.
    Number(f64, usize),
    Missing,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    fn percent(v: Option<f64>) -> Cell {
        v.filter(|x| x.is_finite()).map_or(Cell::Missing, Cell::Percent)
    }

    fn number(v: Option<f64>, digits: usize) -> Cell {
        v.filter(|x| x.is_finite()).map_or(Cell::Missing, |x| Cell::Number(x, digits))
    }

    fn display(&self) -> String {
        match self {
            Cell::Text(s) => s.replace('|', "\\|"),
            Cell::Int(n) => n.to_string(),
            Cell::Percent(v) => format!("{:.1}%", v * 100.0),
            Cell::Points(v) => format!("{:+.1}", v * 100.0),
            Cell::Number(v, d) => format!("{v:.d$}"),
            Cell::Missing => "n/a".into(),
        }
    }

    fn raw(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Percent(v) | Cell::Points(v) | Cell::Number(v, _) => v.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text(s) => s.clone().into(),
            Cell::Int(n) => (*n).into(),
            Cell::Percent(v) | Cell::Points(v) | Cell::Number(v, _) => (*v).into(),
            Cell::Missing => serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(id: &str, title: &str, columns: &[&str]) -> Self {
        Table {
            id: id.to_string(),
            title: title.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.id);
        self.rows.push(row);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        out += &format!("| {} |\n", self.columns.join(" | "));
        let align: Vec<&str> = (0..self.columns.len())
            .map(|i| if i == 0 { "---" } else { "---:" })
            .collect();
        out += &format!("| {} |\n", align.join(" | "));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::display).collect();
            out += &format!("| {} |\n", cells.join(" | "));
        }
        for note in &self.notes {
            out += &format!("\n_{note}_\n");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv for table {}: {e}", self.id));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::raw)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "title": self.title,
            "columns": self.columns,
            "rows": self
                .rows
                .iter()
                .map(|r| r.iter().map(Cell::json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "notes": self.notes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub analysis_hash: String,
    pub config: String,
    pub inputs: Vec<InputDigest>,
    pub tables: Vec<String>,
    pub reliability_curves: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub manifest: Manifest,
    pub tables: Vec<Table>,
    pub reliability: Vec<ReliabilityCurve>,
}

impl ReportBundle {
    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.id == id)
    }
}

fn pct_of(k: usize, n: usize) -> Cell {
    if n == 0 {
        Cell::Missing
    } else {
        Cell::Percent(k as f64 / n as f64)
    }
}

fn baseline_table(out: &RunOutputs) -> Table {
    let mut t = Table::new(
        "baseline_accuracy",
        "Baseline accuracy on the test split (majority vote)",
        &["Dataset", "N (test)", "Human", "AI"],
    );
    let oracle = &out.analysis.oracle;
    for r in oracle.per_dataset.iter().chain(std::iter::once(&oracle.overall)) {
        t.push(vec![
            Cell::text(&r.dataset),
            Cell::Int(r.n as u64),
            pct_of(r.human_correct, r.n),
            pct_of(r.ai_correct, r.n),
        ]);
    }
    t
}

fn hybrid_table(out: &RunOutputs, resolved: &Resolved, condition: Condition, mode: Mode) -> Option<Table> {
    let results: Vec<_> = resolved
        .policies
        .iter()
        .filter_map(|&k| out.routing.result(k, condition, mode))
        .collect();
    let first = results.first()?;
    let mut columns = vec!["Dataset".to_string(), "N".into(), "AI".into(), "Human".into()];
    for r in &results {
        columns.push(r.kind.short().to_string());
        columns.push(format!("{} to human", r.kind.short()));
    }
    let unit = match mode {
        Mode::Majority => "items",
        Mode::Individual => "observations",
    };
    let mut t = Table {
        id: format!("hybrid_{condition}_{mode}"),
        title: format!("Hybrid accuracy, {condition} condition, {mode} mode"),
        columns,
        rows: Vec::new(),
        notes: Vec::new(),
    };
    let row_of = |r: &AccuracyRow| -> Vec<Cell> {
        vec![
            Cell::text(&r.dataset),
            Cell::Int(r.n as u64),
            pct_of(r.ai_correct, r.n),
            pct_of(r.human_correct, r.human_n),
        ]
    };
    let mut rows: Vec<Vec<Cell>> = first.report.per_dataset.iter().map(row_of).collect();
    rows.push(row_of(&first.report.overall));
    for res in &results {
        let by_row = res
            .report
            .per_dataset
            .iter()
            .chain(std::iter::once(&res.report.overall));
        for (cells, r) in rows.iter_mut().zip(by_row) {
            cells.push(pct_of(r.correct, r.n));
            cells.push(pct_of(r.to_human, r.n));
        }
    }
    for row in rows {
        t.push(row);
    }
    t.note(format!("N counts {unit}; accuracy is over the same {unit}."));
    if condition != Condition::Baseline {
        t.note("Human columns cover the low-confidence subset; all other items keep the AI answer.");
    }
    let unroutable: Vec<String> = results
        .iter()
        .filter(|r| r.report.unroutable > 0)
        .map(|r| format!("{} {}", r.kind.short(), r.report.unroutable))
        .collect();
    if !unroutable.is_empty() {
        t.note(format!("Excluded as unroutable (no human answer): {}.", unroutable.join(", ")));
    }
    Some(t)
}

fn policy_table(out: &RunOutputs) -> Table {
    let mut t = Table::new(
        "policies",
        "Learned routing thresholds per dataset group",
        &["Policy", "Mode", "Group", "T", "T_h", "T_a"],
    );
    for lp in &out.routing.policies {
        for (group, params) in &lp.policy.thresholds {
            let (single, th, ta) = match *params {
                Thresholds::None => (Cell::Missing, Cell::Missing, Cell::Missing),
                Thresholds::Single { t } => (Cell::Number(t, 2), Cell::Missing, Cell::Missing),
                Thresholds::Pair { human, ai } => (Cell::Missing, Cell::Number(human, 2), Cell::Number(ai, 2)),
            };
            t.push(vec![
                Cell::text(lp.policy.kind.short()),
                Cell::text(lp.mode.as_str()),
                Cell::text(group),
                single,
                th,
                ta,
            ]);
        }
    }
    t.note(format!("Grid step {}.", out.routing.policies.first().map_or(0.0, |p| p.policy.grid_step)));
    t
}

fn calibration_table(out: &RunOutputs, bins: usize) -> Table {
    let mut t = Table::new(
        "calibration_metrics",
        "Calibration metrics on the test split",
        &["Side", "Confidence", "Calibrator", "N train", "N test", "ECE", "Brier", "AUROC", "Note"],
    );
    for r in &out.calibration.metrics {
        t.push(vec![
            Cell::text(&r.side),
            Cell::text(&r.confidence_method),
            Cell::text(r.calibrator.name()),
            Cell::Int(r.n_train as u64),
            Cell::Int(r.n_test as u64),
            Cell::number(r.ece, 3),
            Cell::number(r.brier, 3),
            Cell::number(r.auroc, 3),
            Cell::text(r.error.clone().unwrap_or_default()),
        ]);
    }
    t.note(format!("ECE over {bins} equal-width bins. Calibrators are fitted on the calibration split."));
    for h in out.calibration.human.iter().filter(|h| h.fallback_reason.is_some()) {
        t.note(format!(
            "human/{}/{} reuses the baseline map: {}",
            h.condition,
            h.mode,
            h.fallback_reason.as_deref().unwrap_or_default()
        ));
    }
    t
}

fn quadrant_table(out: &RunOutputs) -> Table {
    let mut t = Table::new(
        "quadrants",
        "Agreement quadrants on the test split",
        &["Category", "Count", "Share", "Mean AI confidence"],
    );
    let q = &out.analysis.oracle.quadrants;
    let c = &out.analysis.oracle.confidence_by_category;
    let n = q.total();
    for (name, count, conf) in [
        ("Both correct", q.both_correct, c.both_correct),
        ("AI only correct", q.ai_only, c.ai_only),
        ("Human only correct", q.human_only, c.human_only),
        ("Neither correct", q.neither, c.neither),
    ] {
        t.push(vec![Cell::text(name), Cell::Int(count as u64), pct_of(count, n), Cell::number(conf, 3)]);
    }
    t
}

fn oracle_table(out: &RunOutputs, resolved: &Resolved) -> Table {
    let mut t = Table::new(
        "oracle",
        "Oracle upper bound and captured headroom",
        &["Dataset", "N", "Human", "AI", "Hybrid", "Oracle", "Headroom", "Captured", "Capture rate"],
    );
    let o = &out.analysis.oracle;
    for r in o.per_dataset.iter().chain(std::iter::once(&o.overall)) {
        t.push(vec![
            Cell::text(&r.dataset),
            Cell::Int(r.n as u64),
            Cell::Percent(r.human_accuracy()),
            Cell::Percent(r.ai_accuracy()),
            Cell::percent(r.hybrid_accuracy()),
            Cell::Percent(r.oracle_accuracy()),
            Cell::Points(r.headroom()),
            r.captured().map_or(Cell::Missing, Cell::Points),
            Cell::percent(r.capture_rate()),
        ]);
    }
    t.note(format!(
        "Hybrid is the {} policy in majority mode, baseline condition. Capture rate is undefined without headroom.",
        resolved.oracle_policy.short()
    ));
    t
}

fn subset_table(out: &RunOutputs) -> Table {
    let mut t = Table::new(
        "subset",
        "Low-confidence subset",
        &["Dataset", "Items", "Fraction", "Selected", "Selected (test)", "Max calibrated confidence"],
    );
    for r in &out.routing.subset_rows {
        t.push(vec![
            Cell::text(&r.dataset),
            Cell::Int(r.items as u64),
            Cell::Percent(r.fraction),
            Cell::Int(r.selected as u64),
            Cell::Int(r.selected_test as u64),
            Cell::number(r.max_confidence, 3),
        ]);
    }
    let total: usize = out.routing.subset_rows.iter().map(|r| r.selected).sum();
    let test: usize = out.routing.subset_rows.iter().map(|r| r.selected_test).sum();
    let items: usize = out.routing.subset_rows.iter().map(|r| r.items).sum();
    t.push(vec![
        Cell::text("All"),
        Cell::Int(items as u64),
        Cell::Missing,
        Cell::Int(total as u64),
        Cell::Int(test as u64),
        Cell::Missing,
    ]);
    t
}

fn condition_label(c: Condition) -> &'static str {
    match c {
        Condition::Baseline => "Baseline (unassisted)",
        Condition::Top2 => "Top-2 assistance",
        Condition::Delegation => "Subtask delegation",
    }
}

fn overreliance_tables(out: &RunOutputs) -> Vec<Table> {
    let Some(r) = &out.analysis.overreliance else { return Vec::new() };
    let mut acc = Table::new(
        "overreliance_accuracy",
        "Human accuracy by condition and AI correctness (low-confidence test subset)",
        &["AI correctness", "Condition", "Obs.", "Items", "Accuracy", "CI low", "CI high"],
    );
    for c in r.cells.iter().filter(|c| c.observations > 0) {
        acc.push(vec![
            Cell::text(if c.ai_correct { "Correct" } else { "Incorrect" }),
            Cell::text(condition_label(c.condition)),
            Cell::Int(c.observations as u64),
            Cell::Int(c.items as u64),
            Cell::percent(c.accuracy),
            Cell::percent(c.ci.map(|x| x.0)),
            Cell::percent(c.ci.map(|x| x.1)),
        ]);
    }
    let level = r.options.level * 100.0;
    acc.note(format!(
        "{level}% percentile bootstrap intervals, {} resamples of raw observations.",
        r.options.bootstrap_resamples
    ));
    let mut diff = Table::new(
        "overreliance_differences",
        "Accuracy differences against baseline",
        &["AI correctness", "Comparison", "Diff (pp)", "CI low", "CI high", "p"],
    );
    for c in &r.comparisons {
        diff.push(vec![
            Cell::text(if c.ai_correct { "Correct" } else { "Incorrect" }),
            Cell::text(format!("{} vs baseline", condition_label(c.condition))),
            Cell::Points(c.diff),
            Cell::Points(c.ci.0),
            Cell::Points(c.ci.1),
            Cell::Number(c.p, 3),
        ]);
    }
    diff.note(format!("Method: {METHOD_NOTE}; {} permutations.", r.options.permutations));
    vec![acc, diff]
}

fn delegation_tables(out: &RunOutputs) -> Vec<Table> {
    let Some(d) = &out.analysis.delegation else { return Vec::new() };
    let mut t = Table::new(
        "delegation",
        "Subtask routing by dataset",
        &[
            "Dataset",
            "N items",
            "Avg subtasks",
            "Avg to human",
            "Avg to AI",
            "% to human",
            "Mean conf (human-routed)",
            "Mean conf (AI-kept)",
        ],
    );
    for r in d.per_dataset.iter().chain(std::iter::once(&d.overall)) {
        if r.items == 0 {
            continue;
        }
        t.push(vec![
            Cell::text(&r.dataset),
            Cell::Int(r.items as u64),
            Cell::Number(r.avg_subtasks(), 2),
            Cell::Number(r.avg_to_human(), 2),
            Cell::Number(r.avg_to_ai(), 2),
            if r.subtasks == 0 { Cell::Missing } else { Cell::Percent(r.share_to_human()) },
            Cell::number(r.mean_human_routed_confidence(), 2),
            Cell::number(r.mean_ai_kept_confidence(), 2),
        ]);
    }
    t.note(format!(
        "Subtasks with AI confidence below {} should be routed to a human; {} subtask(s) disagree.",
        d.threshold,
        d.violations.len()
    ));
    let mut v = Table::new(
        "delegation_violations",
        "Subtasks whose routing flag disagrees with the threshold",
        &["Item", "Subtask", "AI confidence", "Routed to human"],
    );
    for x in &d.violations {
        v.push(vec![
            Cell::text(&x.item_id),
            Cell::Int(x.subtask_index as u64),
            Cell::Number(x.ai_confidence, 3),
            Cell::text(x.routed_to_human.to_string()),
        ]);
    }
    vec![t, v]
}

fn bias_table(out: &RunOutputs) -> Table {
    let b = &out.analysis.positional_bias;
    let mut t = Table::new(
        "positional_bias",
        "Option 1 selection rate by human participants",
        &["Datasets", "Option 1 picks", "N", "Rate"],
    );
    t.push(vec![
        Cell::text(&b.target),
        Cell::Int(b.target_option_one),
        Cell::Int(b.target_n),
        pct_of(b.target_option_one as usize, b.target_n as usize),
    ]);
    t.push(vec![
        Cell::text("Other MC datasets"),
        Cell::Int(b.other_option_one),
        Cell::Int(b.other_n),
        pct_of(b.other_option_one as usize, b.other_n as usize),
    ]);
    match &b.test {
        Some(z) if z.degenerate => t.note("Pooled proportion is 0 or 1; z reported as 0."),
        Some(z) => t.note(format!("Two-proportion z-test: z = {:.2}, p = {:.3e}.", z.z, z.p)),
        None => t.note("Not tested: one side has no multiple-choice human answers."),
    }
    t
}

fn ingest_table(out: &RunOutputs) -> Table {
    let s = &out.ingest.summary;
    let mut t = Table::new("ingest_summary", "Ingested data", &["Quantity", "Value"]);
    let mut push = |name: String, v: usize| t.push(vec![Cell::Text(name), Cell::Int(v as u64)]);
    push("items".into(), s.items);
    push("dataset groups".into(), s.groups.len());
    for (d, n) in &s.items_per_dataset {
        push(format!("items: {d}"), *n);
    }
    push("calibration items".into(), s.calibration_items);
    push("test items".into(), s.test_items);
    push("AI responses".into(), s.ai_responses);
    for (c, n) in &s.human_responses {
        push(format!("human responses: {c}"), *n);
    }
    push("human responses dropped by cap".into(), s.dropped_by_cap);
    push("unresolvable answers".into(), s.unresolvable_answers);
    t
}

/// Assembles every table from the stage outputs.
pub fn build_bundle(config: &RunConfig, resolved: &Resolved, out: &RunOutputs) -> ReportBundle {
    let mut tables = vec![ingest_table(out), baseline_table(out)];
    for &condition in &resolved.conditions {
        for &mode in &resolved.modes {
            tables.extend(hybrid_table(out, resolved, condition, mode));
        }
    }
    tables.push(policy_table(out));
    tables.push(calibration_table(out, config.calibration.ece_bins));
    tables.push(quadrant_table(out));
    tables.push(oracle_table(out, resolved));
    tables.push(subset_table(out));
    tables.extend(overreliance_tables(out));
    tables.extend(delegation_tables(out));
    tables.push(bias_table(out));
    if !out.routing.skipped_conditions.is_empty() {
        let skipped: Vec<&str> = out.routing.skipped_conditions.iter().map(|c| c.as_str()).collect();
        if let Some(t) = tables.iter_mut().find(|t| t.id == "baseline_accuracy") {
            t.note(format!("No test-subset data for: {}.", skipped.join(", ")));
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config),
        analysis_hash: analysis_hash(config),
        config: recorded_config(config),
        inputs: out.ingest.inputs.clone(),
        tables: tables.iter().map(|t| t.id.clone()).collect(),
        reliability_curves: out.calibration.reliability.iter().map(|c| c.id.clone()).collect(),
    };
    ReportBundle {
        manifest,
        tables,
        reliability: out.calibration.reliability.clone(),
    }
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn reliability_csv(curve: &ReliabilityCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::InvalidInput(format!("csv for curve {}: {e}", curve.id));
    w.write_record(["bin_mean_score", "bin_accuracy", "bin_count"]).map_err(err)?;
    for p in &curve.points {
        w.write_record([p.bin_mean_score.to_string(), p.bin_accuracy.to_string(), p.bin_count.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes one file per table per format, the reliability curves (CSV) and
/// `manifest.json`. Returns the written paths in order.
pub fn emit_report(bundle: &ReportBundle, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for table in &bundle.tables {
        for format in formats {
            let path = dir.join(format!("{}.{}", table.id, format.extension()));
            let text = match format {
                Format::Md => table.to_markdown(),
                Format::Csv => table.to_csv()?,
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&table.to_json()).expect("table serializes");
                    s.push('\n');
                    s
                }
            };
            written.push(write(path, &text)?);
        }
    }
    for curve in &bundle.reliability {
        written.push(write(dir.join(format!("reliability_{}.csv", curve.id)), &reliability_csv(curve)?)?);
    }
    let manifest = dir.join("manifest.json");
    write_json(&manifest, &bundle.manifest)?;
    written.push(manifest);
    Ok(written)
}
