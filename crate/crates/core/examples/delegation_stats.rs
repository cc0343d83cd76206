//! Per-dataset subtask routing statistics from a decompositions file.
//!
//! `cargo run --example delegation_stats -- [decompositions.jsonl] [threshold]`

use std::path::PathBuf;

use deferral_lab::analyze::{delegation_stats, load_decompositions};

fn main() -> deferral_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/decompositions.jsonl"));
    let threshold: f64 = args.next().map(|s| s.parse().expect("threshold must be a number")).unwrap_or(0.8);
    let records = load_decompositions(&path, None)?;
    let report = delegation_stats(&records, threshold);
    println!(
        "{:<14} {:>5} {:>9} {:>9} {:>8} {:>8}",
        "dataset", "items", "subtasks", "to human", "avg sub", "% human"
    );
    for row in report.per_dataset.iter().chain(std::iter::once(&report.overall)) {
        println!(
            "{:<14} {:>5} {:>9} {:>9} {:>8.2} {:>7.1}%",
            row.dataset,
            row.items,
            row.subtasks,
            row.to_human,
            row.avg_subtasks(),
            100.0 * row.share_to_human()
        );
    }
    println!("{} subtasks routed against the {threshold} threshold", report.violations.len());
    Ok(())
}
