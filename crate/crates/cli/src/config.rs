//! The run configuration document.

use std::path::{Path, PathBuf};

use defer_core::data::SynthSpec;
use defer_core::dm::{DmScenario, DEFAULT_FLIP_PROBABILITY};
use defer_core::pipeline::{FamilySettings, ModelFamily};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Syntax(serde_json::Error),
    #[error("config must be a JSON object")]
    NotAnObject,
    #[error("unknown config key(s): {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("missing required config field(s): {}", .0.join(", "))]
    MissingFields(Vec<String>),
    #[error("referenced path(s) do not exist: {}", display_paths(.0))]
    MissingPaths(Vec<PathBuf>),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "config_read",
            ConfigError::Syntax(_) => "config_syntax",
            ConfigError::NotAnObject => "config_not_object",
            ConfigError::UnknownKeys(_) => "unknown_keys",
            ConfigError::MissingFields(_) => "missing_fields",
            ConfigError::MissingPaths(_) => "missing_paths",
            ConfigError::Invalid(_) => "invalid_config",
        }
    }

    /// Structured detail for the machine-readable error.
    pub fn details(&self) -> Value {
        match self {
            ConfigError::UnknownKeys(v) | ConfigError::MissingFields(v) => serde_json::json!(v),
            ConfigError::MissingPaths(v) => serde_json::json!(v),
            _ => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default)]
        spec: SynthSpec,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    Compas {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "default_min_category_count")]
        min_category_count: usize,
        #[serde(default = "default_screening_window")]
        screening_window_days: i64,
    },
    Health {
        claims_path: PathBuf,
        members_path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "default_min_category_count")]
        min_category_count: usize,
    },
    /// A directory written by `prepare-data`.
    Prepared { path: PathBuf },
}

fn default_train_fraction() -> f64 {
    0.7
}
fn default_test_fraction() -> f64 {
    0.3
}
fn default_min_category_count() -> usize {
    10
}
fn default_screening_window() -> i64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub alpha_fair: f64,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::Defer,
            alpha_fair: 0.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmConfig {
    pub scenario: DmScenario,
    pub flip_probability: f64,
    /// Per-example log-likelihood of the constant-loss DM.
    pub constant_loss_alpha: f64,
    /// Directory written by `train-dm`; when set, its predictions are used instead of training a DM.
    pub predictions: Option<PathBuf>,
}

impl Default for DmConfig {
    fn default() -> Self {
        DmConfig {
            scenario: DmScenario::HighAccuracy,
            flip_probability: DEFAULT_FLIP_PROBABILITY,
            constant_loss_alpha: 0.8f64.ln(),
            predictions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub runs_per_setting: usize,
    /// Worker threads; `0` uses every core.
    pub jobs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alphas: vec![0.0],
            gammas: vec![0.0],
            runs_per_setting: 5,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Defaults to `model/model.json` in the output directory.
    pub model: Option<PathBuf>,
    /// Defaults to `dm/test_predictions.csv` in the output directory.
    pub dm_predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSection {
    /// Defaults to `sweep/report.json` in the output directory.
    pub input: Option<PathBuf>,
    pub bins: Vec<f64>,
}

impl Default for ParetoSection {
    fn default() -> Self {
        ParetoSection {
            input: None,
            bins: default_bins(),
        }
    }
}

fn default_bins() -> Vec<f64> {
    vec![0.0, 0.3, 0.7, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Sweep reports to aggregate; defaults to `sweep/report.json` in the output directory.
    pub inputs: Vec<PathBuf>,
    pub bins: Vec<f64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            inputs: Vec::new(),
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub settings: FamilySettings,
    #[serde(default)]
    pub dm: DmConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub pareto: ParetoSection,
    #[serde(default)]
    pub report: ReportSection,
}

const KNOWN_KEYS: [&str; 10] = [
    "seed",
    "output_dir",
    "dataset",
    "model",
    "settings",
    "dm",
    "sweep",
    "evaluate",
    "pareto",
    "report",
];
const REQUIRED_KEYS: [&str; 3] = ["seed", "output_dir", "dataset"];

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_config_str(&text, base, overrides)
}

/// Parses and validates a config document; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut doc: Value = serde_json::from_str(text).map_err(ConfigError::Syntax)?;
    let obj = doc.as_object_mut().ok_or(ConfigError::NotAnObject)?;

    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    if let Some(seed) = overrides.seed {
        obj.insert("seed".into(), seed.into());
    }
    let out_override = overrides.output_dir.is_some();
    if let Some(out) = &overrides.output_dir {
        obj.insert("output_dir".into(), Value::String(out.display().to_string()));
    }
    let missing: Vec<String> = REQUIRED_KEYS
        .iter()
        .filter(|k| obj.get(**k).is_none_or(Value::is_null))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingFields(missing));
    }

    let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if let Some(jobs) = overrides.jobs {
        cfg.sweep.jobs = jobs;
    }
    cfg.resolve_paths(base, out_override);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path, keep_output_dir: bool) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if !keep_output_dir {
            fix(&mut self.output_dir);
        }
        match &mut self.dataset {
            DatasetConfig::Synthetic { .. } => {}
            DatasetConfig::Compas { path, .. } | DatasetConfig::Prepared { path } => fix(path),
            DatasetConfig::Health {
                claims_path,
                members_path,
                ..
            } => {
                fix(claims_path);
                fix(members_path);
            }
        }
        for p in [
            self.dm.predictions.as_mut(),
            self.evaluate.model.as_mut(),
            self.evaluate.dm_predictions.as_mut(),
            self.pareto.input.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.report.inputs.iter_mut().for_each(fix);
    }

    fn referenced_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = match &self.dataset {
            DatasetConfig::Synthetic { .. } => Vec::new(),
            DatasetConfig::Compas { path, .. } | DatasetConfig::Prepared { path } => vec![path],
            DatasetConfig::Health {
                claims_path,
                members_path,
                ..
            } => vec![claims_path, members_path],
        };
        out.extend(
            [
                &self.dm.predictions,
                &self.evaluate.model,
                &self.evaluate.dm_predictions,
                &self.pareto.input,
            ]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path),
        );
        out.extend(self.report.inputs.iter().map(PathBuf::as_path));
        out
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let missing: Vec<PathBuf> = self
            .referenced_paths()
            .into_iter()
            .filter(|p| !p.exists())
            .map(Path::to_path_buf)
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::MissingPaths(missing));
        }
        if let DatasetConfig::Synthetic { spec, train_fraction } = &self.dataset {
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(ConfigError::Invalid("dataset.train_fraction must lie in (0, 1)".into()));
            }
        }
        if self.sweep.alphas.is_empty() || self.sweep.gammas.is_empty() {
            return Err(ConfigError::Invalid("sweep.alphas and sweep.gammas must be non-empty".into()));
        }
        if self.sweep.runs_per_setting == 0 {
            return Err(ConfigError::Invalid("sweep.runs_per_setting must be positive".into()));
        }
        Ok(())
    }

    /// The config as recorded in artifact provenance: where outputs go and how
    /// many threads ran do not change results, so both are left out.
    pub fn provenance_config(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("output_dir");
        if let Some(sweep) = obj.get_mut("sweep").and_then(Value::as_object_mut) {
            sweep.remove("jobs");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new(""), &Overrides::default())
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse(r#"{"seed": 3, "output_dir": "out", "dataset": {"kind": "synthetic"}}"#).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.settings, FamilySettings::default());
        assert_eq!(cfg.sweep.runs_per_setting, 5);
        assert_eq!(
            cfg.dataset,
            DatasetConfig::Synthetic {
                spec: SynthSpec::default(),
                train_fraction: 0.7
            }
        );
    }

    #[test]
    fn misspelled_keys_are_named() {
        let err = parse(r#"{"sede": 3, "seed": 1, "output_dir": "o", "dataset": {"kind": "synthetic"}}"#).unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKeys(k) if k == &["sede"]));
        let err = parse(r#"{"seed": 1, "output_dir": "o", "dataset": {"kind": "synthetic"}, "model": {"famly": "defer"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("famly"), "{err}");
        let err = parse(r#"{"seed": 1, "output_dir": "o", "dataset": {"kind": "synthetic", "spec": {"n_rows": 5}}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("n_rows"), "{err}");
    }

    #[test]
    fn missing_fields_are_listed_together() {
        let err = parse(r#"{"model": {"family": "reject"}}"#).unwrap_err();
        assert!(matches!(&err, ConfigError::MissingFields(k) if k == &["seed", "output_dir", "dataset"]));
    }

    #[test]
    fn overrides_supply_seed_and_output() {
        let o = Overrides {
            seed: Some(9),
            output_dir: Some("elsewhere".into()),
            jobs: Some(2),
        };
        let cfg = parse_config_str(r#"{"dataset": {"kind": "synthetic"}}"#, Path::new("base"), &o).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.sweep.jobs, 2);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let text = r#"{"seed": 1, "output_dir": "out", "dataset": {"kind": "prepared", "path": "nowhere"}}"#;
        let err = parse_config_str(text, Path::new("base"), &Overrides::default()).unwrap_err();
        assert!(matches!(&err, ConfigError::MissingPaths(p) if p == &[PathBuf::from("base/nowhere")]));
    }

    #[test]
    fn provenance_omits_placement() {
        let a = parse(r#"{"seed": 3, "output_dir": "a", "dataset": {"kind": "synthetic"}}"#).unwrap();
        let mut b = a.clone();
        b.output_dir = "b".into();
        b.sweep.jobs = 4;
        assert_eq!(a.provenance_config(), b.provenance_config());
        assert!(a.provenance_config().get("seed").is_some());
    }
}
