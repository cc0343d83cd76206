//! Run configuration, read from TOML.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every section is optional; omitted keys take the defaults below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{ConfidenceMethod, SignalOptions};
use crate::analyze::delegation::DEFAULT_DELEGATION_THRESHOLD;
use crate::analyze::{ResamplingOptions, SubsetFractions};
use crate::calibrate::CalibratorKind;
use crate::corpus::{Condition, GroupMap};
use crate::error::{Error, Result};
use crate::route::{grid, Mode, PolicyKind, DEFAULT_GRID_STEP};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DEFERRAL_LAB_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub items: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub decompositions: Option<PathBuf>,
    /// JSONL of `{a, b, equivalent}` answer-pair adjudications.
    pub adjudications: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fraction: 0.4, seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CappingConfig {
    pub max_per_item: usize,
    pub seed: u64,
}

impl Default for CappingConfig {
    fn default() -> Self {
        CappingConfig {
            max_per_item: 3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub ai: String,
    pub human: String,
    pub high_conf_threshold: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            ai: "direct_ask".into(),
            human: "direct_ask".into(),
            high_conf_threshold: SignalOptions::default().high_conf_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub method: String,
    pub ece_bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            method: "isotonic".into(),
            ece_bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub grid_step: f64,
    pub policies: Vec<String>,
    pub modes: Vec<String>,
    pub conditions: Vec<String>,
    /// Policy whose baseline majority result feeds the oracle table.
    pub oracle_policy: String,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            grid_step: DEFAULT_GRID_STEP,
            policies: PolicyKind::ALL.iter().map(|k| k.short().to_string()).collect(),
            modes: Mode::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            conditions: Condition::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            oracle_policy: "2T".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub merge_deception: bool,
    pub overrides: BTreeMap<String, String>,
}

impl Default for GroupConfig {
    fn default() -> Self {
        let g = GroupMap::default();
        GroupConfig {
            merge_deception: g.merge_deception,
            overrides: g.overrides,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetScope {
    /// Rank calibration and test items together (the subset then spans both).
    #[default]
    All,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetConfig {
    pub default: f64,
    pub per_dataset: BTreeMap<String, f64>,
    pub scope: SubsetScope,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        let f = SubsetFractions::default();
        SubsetConfig {
            default: f.default,
            per_dataset: f.per_dataset,
            scope: SubsetScope::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResamplingConfig {
    pub bootstrap_resamples: usize,
    pub permutations: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        let r = ResamplingOptions::default();
        ResamplingConfig {
            bootstrap_resamples: r.bootstrap_resamples,
            permutations: r.permutations,
            seed: r.seed,
            level: r.level,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub delegation_threshold: f64,
    /// Dataset whose option-1 selection rate is tested against the rest.
    pub bias_target: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            delegation_threshold: DEFAULT_DELEGATION_THRESHOLD,
            bias_target: "GPQA".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            formats: vec!["md".into(), "csv".into(), "json".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub split: SplitConfig,
    pub capping: CappingConfig,
    pub confidence: ConfidenceConfig,
    pub calibration: CalibrationConfig,
    pub routing: RoutingConfig,
    pub groups: GroupConfig,
    pub subset: SubsetConfig,
    pub resampling: ResamplingConfig,
    pub analysis: AnalysisConfig,
    pub report: ReportConfig,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Csv,
    Json,
}

impl Format {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Md => "md",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// The config with every name parsed; produced by [`RunConfig::validate`].
#[derive(Clone, Debug)]
pub struct Resolved {
    pub ai_method: ConfidenceMethod,
    pub human_method: ConfidenceMethod,
    pub calibrator: CalibratorKind,
    pub policies: Vec<PolicyKind>,
    pub modes: Vec<Mode>,
    pub conditions: Vec<Condition>,
    pub oracle_policy: PolicyKind,
    pub formats: Vec<Format>,
}

fn unique<T: Ord + Copy>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Canonical TOML text; equal configs give identical bytes.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn required(&self, p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve_path(p))
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))
    }

    pub fn items_path(&self) -> Result<PathBuf> {
        self.required(&self.paths.items, "items")
    }

    pub fn responses_path(&self) -> Result<PathBuf> {
        self.required(&self.paths.responses, "responses")
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        self.required(&self.paths.output, "output")
    }

    pub fn decompositions_path(&self) -> Option<PathBuf> {
        self.paths.decompositions.as_deref().map(|p| self.resolve_path(p))
    }

    pub fn adjudications_path(&self) -> Option<PathBuf> {
        self.paths.adjudications.as_deref().map(|p| self.resolve_path(p))
    }

    pub fn group_map(&self) -> GroupMap {
        GroupMap {
            merge_deception: self.groups.merge_deception,
            overrides: self.groups.overrides.clone(),
        }
    }

    pub fn subset_fractions(&self) -> SubsetFractions {
        SubsetFractions {
            default: self.subset.default,
            per_dataset: self.subset.per_dataset.clone(),
        }
    }

    pub fn resampling_options(&self) -> ResamplingOptions {
        ResamplingOptions {
            bootstrap_resamples: self.resampling.bootstrap_resamples,
            permutations: self.resampling.permutations,
            seed: self.resampling.seed,
            level: self.resampling.level,
        }
    }

    pub fn signal_options(&self) -> SignalOptions {
        SignalOptions {
            high_conf_threshold: self.confidence.high_conf_threshold,
        }
    }

    /// Checks every range and name; input files must exist.
    pub fn validate(&self) -> Result<Resolved> {
        let range = |name: &str, v: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is out of range")))
            }
        };
        let f = self.split.fraction;
        range("split.fraction", f, f > 0.0 && f < 1.0)?;
        let m = self.capping.max_per_item;
        range("capping.max_per_item", m as f64, m >= 1)?;
        let t = self.confidence.high_conf_threshold;
        range("confidence.high_conf_threshold", t, (0.0..=1.0).contains(&t))?;
        let b = self.calibration.ece_bins;
        range("calibration.ece_bins", b as f64, b >= 1)?;
        grid(self.routing.grid_step)?;
        self.subset_fractions().validate()?;
        let r = &self.resampling;
        range("resampling.bootstrap_resamples", r.bootstrap_resamples as f64, r.bootstrap_resamples >= 1)?;
        range("resampling.level", r.level, r.level > 0.0 && r.level < 1.0)?;
        let d = self.analysis.delegation_threshold;
        range("analysis.delegation_threshold", d, (0.0..=1.0).contains(&d))?;

        for path in [self.items_path()?, self.responses_path()?]
            .into_iter()
            .chain(self.decompositions_path())
            .chain(self.adjudications_path())
        {
            if !path.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", path.display())));
            }
        }
        self.output_dir()?;

        let resolved = Resolved {
            ai_method: ConfidenceMethod::parse(&self.confidence.ai)?,
            human_method: ConfidenceMethod::parse(&self.confidence.human)?,
            calibrator: CalibratorKind::parse(&self.calibration.method)?,
            policies: unique(
                self.routing
                    .policies
                    .iter()
                    .map(|p| PolicyKind::parse(p))
                    .collect::<Result<_>>()?,
            ),
            modes: unique(self.routing.modes.iter().map(|m| Mode::parse(m)).collect::<Result<_>>()?),
            conditions: unique(
                self.routing
                    .conditions
                    .iter()
                    .map(|c| c.parse::<Condition>())
                    .collect::<Result<_>>()?,
            ),
            oracle_policy: PolicyKind::parse(&self.routing.oracle_policy)?,
            formats: unique(self.report.formats.iter().map(|f| Format::parse(f)).collect::<Result<_>>()?),
        };
        if resolved.policies.is_empty() || resolved.modes.is_empty() {
            return Err(Error::Config("at least one policy and one mode are required".into()));
        }
        if !resolved.conditions.contains(&Condition::Baseline) {
            return Err(Error::Config("routing.conditions must include baseline".into()));
        }
        if !resolved.policies.contains(&resolved.oracle_policy) {
            return Err(Error::Config(format!(
                "routing.oracle_policy `{}` is not among routing.policies",
                self.routing.oracle_policy
            )));
        }
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_inputs() -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("items.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("responses.jsonl"), "").unwrap();
        let text = "[paths]\nitems = \"items.jsonl\"\nresponses = \"responses.jsonl\"\noutput = \"out\"\n";
        std::fs::write(dir.path().join("c.toml"), text).unwrap();
        let config = RunConfig::load(&dir.path().join("c.toml")).unwrap();
        (dir, config)
    }

    #[test]
    fn defaults_validate() {
        let (_dir, config) = with_inputs();
        let r = config.validate().unwrap();
        assert_eq!(r.policies.len(), 4);
        assert_eq!(r.calibrator, CalibratorKind::Isotonic);
        assert_eq!(config.split.fraction, 0.4);
        assert_eq!(config.subset_fractions().fraction_for("Big-Bench"), 0.2);
    }

    #[test]
    fn unknown_policy_fails_fast() {
        let (_dir, mut config) = with_inputs();
        config.routing.policies.push("3T".into());
        assert_eq!(config.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn rejects_bad_ranges_and_keys() {
        let (_dir, mut config) = with_inputs();
        config.split.fraction = 1.0;
        assert!(config.validate().is_err());
        assert!(toml::from_str::<RunConfig>("[split]\nfractoin = 0.3\n").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let (_dir, config) = with_inputs();
        let back: RunConfig = toml::from_str(&config.canonical()).unwrap();
        assert_eq!(back.canonical(), config.canonical());
    }
}
