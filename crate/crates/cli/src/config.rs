//! Experiment configuration: a TOML file, then `key=value` overrides.
//!
//! Precedence, lowest first: built-in defaults, `LDP_MOE_OUTPUT_DIR` for the
//! output directory, the config file, command-line overrides.

use crate::error::CliError;
use ldp_moe::bounds::CertifyOptions;
use ldp_moe::data::LabelRule;
use ldp_moe::model::LdpConfig;
use ldp_moe::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const OUTPUT_DIR_ENV: &str = "LDP_MOE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        label_column: String,
        positive: LabelRule,
        #[serde(default = "comma")]
        delimiter: char,
        #[serde(default)]
        ignore_columns: Vec<String>,
    },
    /// Two digits of an IDX image/label pair; `digits[0]` is the positive class.
    /// With test files present their examples form the test split and the
    /// configured random split is not used.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        digits: [u8; 2],
    },
    /// A dataset cache file written by this tool.
    Cache { path: PathBuf },
}

fn comma() -> char {
    ','
}

impl DatasetSpec {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSpec::Csv { path, .. } | DatasetSpec::Cache { path } => vec![path.as_path()],
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                let mut v = vec![train_images.as_path(), train_labels.as_path()];
                v.extend(test_images.as_deref());
                v.extend(test_labels.as_deref());
                v
            }
        }
    }

    fn default_name(&self) -> String {
        match self {
            DatasetSpec::Mnist { digits, .. } => format!("mnist-{}v{}", digits[0], digits[1]),
            DatasetSpec::Csv { path, .. } | DatasetSpec::Cache { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".to_owned()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    #[default]
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in reports; defaults to the dataset file stem.
    pub name: Option<String>,
    pub dataset: Option<DatasetSpec>,
    /// `train.ldp` must stay unconstrained; the sweep comes from `epsilons`.
    pub train: TrainConfig,
    #[serde(with = "settings")]
    pub epsilons: Vec<LdpConfig>,
    pub bound: CertifyOptions,
    pub output_dir: PathBuf,
    pub format: ReportFormat,
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            dataset: None,
            train: TrainConfig::default(),
            epsilons: default_sweep(),
            bound: CertifyOptions::default(),
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
            format: ReportFormat::Table,
            save_models: true,
        }
    }
}

pub fn default_sweep() -> Vec<LdpConfig> {
    let mut v = vec![LdpConfig::Unconstrained];
    v.extend([0.5, 2.0, 4.0, 5.0, 10.0].map(|e| LdpConfig::Constrained { epsilon: e }));
    v
}

/// Sweep entries as `"none"` or a bare number.
mod settings {
    use ldp_moe::model::LdpConfig;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &[LdpConfig], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|c| match c.epsilon() {
                Some(e) => Repr::Number(e),
                None => Repr::Word("none".into()),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<LdpConfig>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Number(e) => LdpConfig::constrained(e),
                Repr::Word(w) => w.parse(),
            })
            .collect::<Result<_, _>>()
            .map_err(D::Error::custom)
    }
}

impl ExperimentConfig {
    pub fn dataset_name(&self) -> String {
        match (&self.name, &self.dataset) {
            (Some(n), _) => n.clone(),
            (None, Some(d)) => d.default_name(),
            (None, None) => "data".to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.epsilons.is_empty() {
            return bad("`epsilons` is empty; list at least one setting (e.g. [\"none\"])".into());
        }
        if self.train.ldp != LdpConfig::Unconstrained {
            return bad("`train.ldp` is set; put LDP settings in `epsilons` instead".into());
        }
        let d = self.bound.delta;
        if !(d > 0.0 && d < 1.0) {
            return bad(format!("`bound.delta` must lie in (0, 1), got {d}"));
        }
        if self.bound.lambda_grid.is_empty() {
            return bad("`bound.lambda_grid` is empty".into());
        }
        if let Some(l) = self.bound.lambda_grid.iter().find(|l| !(**l > 0.5 && l.is_finite())) {
            return bad(format!("`bound.lambda_grid` entries must exceed 1/2, got {l}"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.epsilons {
            if !seen.insert(s.tag()) {
                return bad(format!("`epsilons` lists {s} twice"));
            }
        }
        self.train.validate().map_err(CliError::from)
    }

    /// Config for one sweep setting.
    pub fn train_config(&self, setting: LdpConfig) -> TrainConfig {
        TrainConfig {
            ldp: setting,
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }
}

/// One `dotted.key=value` override; the value is read as a TOML value and
/// falls back to a plain string.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn parse(text: &str) -> Result<Override, CliError> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{text}` is not of the form key=value")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::Config(format!("override `{text}` has an empty key")));
        }
        Ok(Override {
            key: key.to_owned(),
            value: parse_value(raw.trim()),
        })
    }

    pub fn new(key: &str, value: toml::Value) -> Override {
        Override {
            key: key.to_owned(),
            value,
        }
    }
}

pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply(table: &mut toml::Table, o: &Override) -> Result<(), CliError> {
    let parts: Vec<&str> = o.key.split('.').collect();
    let (last, parents) = parts.split_last().expect("key is nonempty");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry((*p).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::Config(format!(
                    "override `{}`: `{}` is not a table",
                    o.key,
                    parts[..=i].join(".")
                )))
            }
        };
    }
    cur.insert((*last).to_owned(), o.value.clone());
    Ok(())
}

/// Builds the resolved config from an optional file and overrides.
pub fn resolve(file: Option<&Path>, overrides: &[Override]) -> Result<ExperimentConfig, CliError> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    if !table.contains_key("output_dir") {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                table.insert("output_dir".into(), toml::Value::String(dir));
            }
        }
    }
    for o in overrides {
        apply(&mut table, o)?;
    }
    let origin = file.map_or_else(|| "command line".to_owned(), |p| p.display().to_string());
    let config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}

/// Parses a comma-separated sweep such as `none,0.5,2`.
pub fn parse_sweep(text: &str) -> Result<Vec<LdpConfig>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<LdpConfig>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn sweep_value(sweep: &[LdpConfig]) -> toml::Value {
    toml::Value::Array(
        sweep
            .iter()
            .map(|c| match c.epsilon() {
                Some(e) => toml::Value::Float(e),
                None => toml::Value::String("none".into()),
            })
            .collect(),
    )
}
