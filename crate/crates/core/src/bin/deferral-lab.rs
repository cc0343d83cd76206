use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deferral_lab::config::{RunConfig, SubsetScope, CONFIG_ENV};
use deferral_lab::pipeline::{run_stage, Stage};
use deferral_lab::Error;

/// Calibrated human/AI routing analysis over recorded responses.
#[derive(Parser)]
#[command(name = "deferral-lab", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, cap, split and aggregate; report what was ingested.
    IngestCheck,
    /// Fit calibration maps and score every confidence method.
    Calibrate,
    /// Learn routing thresholds and evaluate every policy.
    Route,
    /// Quadrants, oracle bound, overreliance and delegation statistics.
    Analyze,
    /// Write the report tables from the stored stage outputs.
    Report,
    /// Run every stage and write the report.
    All,
}

/// Flags override the corresponding config keys.
#[derive(Args, Default)]
struct Overrides {
    /// Items file (JSONL).
    #[arg(long, global = true)]
    items: Option<PathBuf>,
    /// Responses file (JSONL).
    #[arg(long, global = true)]
    responses: Option<PathBuf>,
    /// Subtask decompositions file (JSONL).
    #[arg(long, global = true)]
    decompositions: Option<PathBuf>,
    /// Free-text equivalence adjudications (JSONL).
    #[arg(long, global = true)]
    adjudications: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Share of each dataset used for calibration.
    #[arg(long, global = true)]
    split_fraction: Option<f64>,
    /// Seed for the calibration/test split.
    #[arg(long, global = true)]
    split_seed: Option<u64>,
    /// Maximum human responses kept per item and condition.
    #[arg(long, global = true)]
    cap_max: Option<usize>,
    /// Seed for choosing which responses to keep.
    #[arg(long, global = true)]
    cap_seed: Option<u64>,
    /// direct_ask, computed or a signal name.
    #[arg(long, global = true)]
    ai_confidence: Option<String>,
    /// Human confidence method.
    #[arg(long, global = true)]
    human_confidence: Option<String>,
    /// Confidence counted as high by the frac_high_conf signal.
    #[arg(long, global = true)]
    high_conf_threshold: Option<f64>,
    /// identity, isotonic, platt, temperature or histogram.
    #[arg(long, global = true)]
    calibrator: Option<String>,
    /// Equal-width bins for ECE and reliability curves.
    #[arg(long, global = true)]
    ece_bins: Option<usize>,
    /// Threshold grid spacing; must divide 1.
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    /// Comma-separated: 1T, 2T, 1TC, CMP.
    #[arg(long, global = true, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Comma-separated: majority, individual.
    #[arg(long, global = true, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Comma-separated: baseline, top2, delegation.
    #[arg(long, global = true, value_delimiter = ',')]
    conditions: Option<Vec<String>>,
    /// Policy shown as the hybrid in the oracle table.
    #[arg(long, global = true)]
    oracle_policy: Option<String>,
    /// Keep the deception datasets as separate groups.
    #[arg(long, global = true)]
    no_merge_deception: bool,
    /// DATASET=GROUP, repeatable.
    #[arg(long = "group", global = true, value_parser = key_value::<String>)]
    groups: Vec<(String, String)>,
    /// Low-confidence subset fraction for unlisted datasets.
    #[arg(long, global = true)]
    subset_default: Option<f64>,
    /// DATASET=FRACTION, repeatable.
    #[arg(long = "subset-fraction", global = true, value_parser = key_value::<f64>)]
    subset_fractions: Vec<(String, f64)>,
    /// all or test.
    #[arg(long, global = true)]
    subset_scope: Option<String>,
    /// Bootstrap resamples.
    #[arg(long, global = true)]
    bootstrap_resamples: Option<usize>,
    /// Permutations per test.
    #[arg(long, global = true)]
    permutations: Option<usize>,
    /// Seed for bootstrap and permutation draws.
    #[arg(long, global = true)]
    resampling_seed: Option<u64>,
    /// Confidence level of bootstrap intervals.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// AI confidence below which subtasks should go to a human.
    #[arg(long, global = true)]
    delegation_threshold: Option<f64>,
    /// Dataset whose option-1 rate is compared with the rest.
    #[arg(long, global = true)]
    bias_target: Option<String>,
    /// Comma-separated: md, csv, json.
    #[arg(long, global = true, value_delimiter = ',')]
    formats: Option<Vec<String>>,
}

fn key_value<T: std::str::FromStr>(s: &str) -> Result<(String, T), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v = v.parse().map_err(|_| format!("bad value in `{s}`"))?;
    Ok((k.to_string(), v))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Flag paths are taken relative to the working directory.
fn flag_path(p: Option<PathBuf>) -> Result<Option<PathBuf>, Error> {
    match p {
        Some(p) if p.is_relative() => {
            let cwd = std::env::current_dir().map_err(|e| Error::io(Path::new("."), e))?;
            Ok(Some(cwd.join(p)))
        }
        other => Ok(other),
    }
}

impl Overrides {
    fn apply(self, c: &mut RunConfig) -> Result<(), Error> {
        for (slot, value) in [
            (&mut c.paths.items, self.items),
            (&mut c.paths.responses, self.responses),
            (&mut c.paths.decompositions, self.decompositions),
            (&mut c.paths.adjudications, self.adjudications),
            (&mut c.paths.output, self.output),
        ] {
            if let Some(p) = flag_path(value)? {
                *slot = Some(p);
            }
        }
        set(&mut c.split.fraction, self.split_fraction);
        set(&mut c.split.seed, self.split_seed);
        set(&mut c.capping.max_per_item, self.cap_max);
        set(&mut c.capping.seed, self.cap_seed);
        set(&mut c.confidence.ai, self.ai_confidence);
        set(&mut c.confidence.human, self.human_confidence);
        set(&mut c.confidence.high_conf_threshold, self.high_conf_threshold);
        set(&mut c.calibration.method, self.calibrator);
        set(&mut c.calibration.ece_bins, self.ece_bins);
        set(&mut c.routing.grid_step, self.grid_step);
        set(&mut c.routing.policies, self.policies);
        set(&mut c.routing.modes, self.modes);
        set(&mut c.routing.conditions, self.conditions);
        set(&mut c.routing.oracle_policy, self.oracle_policy);
        if self.no_merge_deception {
            c.groups.merge_deception = false;
        }
        c.groups.overrides.extend(self.groups);
        set(&mut c.subset.default, self.subset_default);
        c.subset.per_dataset.extend(self.subset_fractions);
        if let Some(scope) = self.subset_scope {
            c.subset.scope = match scope.as_str() {
                "all" => SubsetScope::All,
                "test" => SubsetScope::Test,
                other => return Err(Error::Config(format!("unknown subset scope `{other}`"))),
            };
        }
        set(&mut c.resampling.bootstrap_resamples, self.bootstrap_resamples);
        set(&mut c.resampling.permutations, self.permutations);
        set(&mut c.resampling.seed, self.resampling_seed);
        set(&mut c.resampling.level, self.level);
        set(&mut c.analysis.delegation_threshold, self.delegation_threshold);
        set(&mut c.analysis.bias_target, self.bias_target);
        set(&mut c.report.formats, self.formats);
        Ok(())
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut config)?;
    let stage = match cli.command {
        Command::IngestCheck => Stage::Ingest,
        Command::Calibrate => Stage::Calibrate,
        Command::Route => Stage::Route,
        Command::Analyze => Stage::Analyze,
        Command::Report => Stage::Report,
        Command::All => Stage::All,
    };
    run_stage(&config, stage)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
