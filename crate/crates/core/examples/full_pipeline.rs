//! Runs every stage on a configuration and prints the headline tables.
//!
//! `cargo run --example full_pipeline -- [config.toml] [output dir]`

use std::path::PathBuf;

use deferral_lab::{run_pipeline, RunConfig};

fn main() -> deferral_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/config.toml"));
    let mut config = RunConfig::load(&config_path)?;
    let output = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("deferral-lab-example"));
    config.paths.output = Some(std::path::absolute(&output).map_err(|e| deferral_lab::Error::io(&output, e))?);

    let bundle = run_pipeline(&config)?;
    for id in ["baseline_accuracy", "oracle", "hybrid_baseline_majority"] {
        if let Some(table) = bundle.table(id) {
            println!("{}", table.to_markdown());
        }
    }
    println!("{} tables written to {}", bundle.tables.len(), output.display());
    Ok(())
}
