use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use deferral_lab::config::{RunConfig, CONFIG_ENV};
use deferral_lab::corpus::{load_items, load_responses, split_calibration_test, write_items, write_responses, Split};
use deferral_lab::pipeline::{read_json, run_stage, RouteArtifact, Stage, ROUTE_FILE};
use deferral_lab::synth::{generate, SynthDataset, SynthOptions};
use deferral_lab::{run_pipeline, Error};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture_config(output: &Path) -> RunConfig {
    let mut config = RunConfig::load(&fixture_dir().join("config.toml")).unwrap();
    config.paths.output = Some(output.to_path_buf());
    config
}

/// Relative path to bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn fixture_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let bundle = run_pipeline(&fixture_config(dir.path())).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0);
    for id in ["ingest_summary", "baseline_accuracy", "oracle", "quadrants", "policies", "delegation"] {
        assert!(bundle.table(id).is_some(), "missing table {id}");
        assert!(dir.path().join(format!("{id}.md")).exists());
    }
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&fixture_config(a.path())).unwrap();
    run_pipeline(&fixture_config(b.path())).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (path, bytes) in &sa {
        assert!(bytes == &sb[path], "{} differs", path.display());
    }
}

#[test]
fn unknown_policy_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = fixture_config(&out);
    config.routing.policies.push("3T".into());
    let err = run_pipeline(&config).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(!out.exists());
}

#[test]
fn csv_only_report_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture_config(dir.path());
    config.report.formats = vec!["csv".into()];
    run_pipeline(&config).unwrap();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            assert_eq!(path.file_name().unwrap(), "artifacts");
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        assert!(name.ends_with(".csv") || name == "manifest.json", "unexpected {name}");
    }
}

#[test]
fn staged_run_matches_single_run() {
    let (staged, whole) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = fixture_config(staged.path());
    for stage in [Stage::Ingest, Stage::Calibrate, Stage::Route, Stage::Analyze, Stage::Report] {
        run_stage(&config, stage).unwrap();
    }
    run_stage(&fixture_config(whole.path()), Stage::All).unwrap();
    assert_eq!(snapshot(staged.path()), snapshot(whole.path()));
}

#[test]
fn stale_artifacts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    run_stage(&config, Stage::Ingest).unwrap();
    let mut changed = config.clone();
    changed.split.seed += 1;
    let err = run_stage(&changed, Stage::Calibrate).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    // report formats do not affect the analysis, so artifacts stay valid
    let mut formats = config.clone();
    formats.report.formats = vec!["md".into()];
    run_stage(&formats, Stage::Calibrate).unwrap();
}

#[test]
fn ingestion_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let items = load_items(&fixture_dir().join("items.jsonl")).unwrap();
    let responses = load_responses(&fixture_dir().join("responses.jsonl"), &items).unwrap();
    write_items(&dir.path().join("items.jsonl"), &items).unwrap();
    write_responses(&dir.path().join("responses.jsonl"), &responses).unwrap();
    let items2 = load_items(&dir.path().join("items.jsonl")).unwrap();
    assert_eq!(items, items2);
    assert_eq!(responses, load_responses(&dir.path().join("responses.jsonl"), &items2).unwrap());
}

#[test]
fn full_size_corpus_splits_634_to_952() {
    let sizes = [
        ("FACTS", 300),
        ("QuALITY", 300),
        ("Big-Bench", 387),
        ("GPQA", 147),
        ("Hidden Agenda", 100),
        ("HLE", 146),
        ("SHADE", 106),
        ("Web of Lies", 100),
    ];
    let options = SynthOptions {
        datasets: sizes.iter().map(|(n, k)| SynthDataset::new(n, *k, Some(4), 0.6, 0.5)).collect(),
        ai_samples: 1,
        baseline_raters: 0,
        assisted_raters: 0,
        participant_pool: 1,
        seed: 1,
    };
    let corpus = generate(&options).unwrap();
    assert_eq!(corpus.items.len(), 1586);
    let split = split_calibration_test(&corpus.items, 0.4, 42).unwrap();
    assert_eq!((split.count(Split::Calibration), split.count(Split::Test)), (634, 952));
}

#[test]
fn overall_hybrid_row_is_weighted_mean_of_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let options = SynthOptions {
        datasets: vec![
            SynthDataset::new("QuALITY", 30, Some(4), 0.8, 0.5),
            SynthDataset::new("GPQA", 12, Some(4), 0.5, 0.4),
        ],
        ..SynthOptions::fixture()
    };
    generate(&options).unwrap().write(dir.path()).unwrap();
    let mut config = RunConfig {
        base_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    config.paths.items = Some("items.jsonl".into());
    config.paths.responses = Some("responses.jsonl".into());
    config.paths.output = Some("out".into());
    config.resampling.bootstrap_resamples = 200;
    config.resampling.permutations = 200;
    run_pipeline(&config).unwrap();
    let routed: RouteArtifact = read_json(&dir.path().join("out/artifacts").join(ROUTE_FILE)).unwrap();
    assert!(!routed.hybrid.is_empty());
    for h in &routed.hybrid {
        let r = &h.report;
        let n: usize = r.per_dataset.iter().map(|d| d.n).sum();
        assert_eq!(n, r.overall.n);
        let weighted: f64 = r.per_dataset.iter().map(|d| d.n as f64 * d.accuracy()).sum::<f64>() / n as f64;
        assert!((weighted - r.overall.accuracy()).abs() < 1e-12);
    }
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deferral-lab"));
    c.env_remove(CONFIG_ENV);
    c
}

#[test]
fn cli_runs_and_maps_errors_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_dir().join("config.toml");
    let ok = cli()
        .args(["all", "--formats", "md", "--output"])
        .arg(dir.path())
        .env(CONFIG_ENV, &config)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("oracle.md").exists());

    let bad = cli()
        .args(["all", "--policies", "1T,3T", "--output"])
        .arg(dir.path())
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let missing = cli()
        .args(["ingest-check", "--items", "no-such-file.jsonl", "--output"])
        .arg(dir.path())
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_ne!(missing.status.code(), Some(0));

    let usage = cli().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
}
