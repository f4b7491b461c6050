//! Versioned output records. Summary files hold one JSON object per line.

use crate::config::ExperimentConfig;
use crate::digest::InputDigest;
use crate::error::CliError;
use crate::load::DataStats;
use ldp_moe::bounds::{BoundReport, CertifyOptions};
use ldp_moe::train::RunSummary;
use ldp_moe::verify::{VerifyOptions, VerifyReport};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SUMMARY_SCHEMA: &str = "ldp-moe/summary/1";
pub const BOUND_SCHEMA: &str = "ldp-moe/bound/1";
pub const VERIFY_SCHEMA: &str = "ldp-moe/verify/1";
pub const REPORT_SCHEMA: &str = "ldp-moe/report/1";

/// Result of one sweep setting with everything needed to recompute it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub schema: String,
    pub dataset: String,
    pub setting: String,
    pub summary: RunSummary,
    /// Model file of each run relative to the record's directory.
    pub model_files: Vec<Option<String>>,
    pub data: DataStats,
    pub inputs: Vec<InputDigest>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundRecord {
    pub schema: String,
    pub model: InputDigest,
    pub run: Option<usize>,
    /// Set when the model's own epsilon was replaced.
    pub epsilon_override: Option<f64>,
    pub train_rows: usize,
    pub options: CertifyOptions,
    pub report: BoundReport,
    pub notes: Vec<String>,
    pub inputs: Vec<InputDigest>,
    /// Config of the training run, when certified from a summary.
    pub config: Option<ExperimentConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRecord {
    pub schema: String,
    pub passed: bool,
    pub options: VerifyOptions,
    pub report: VerifyReport,
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("records serialize")
}

pub fn write_json(path: &Path, record: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(record).expect("records serialize") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads every summary record in a JSON-lines file.
pub fn read_summaries(path: &Path) -> Result<Vec<SummaryRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let here = || format!("{}:{}", path.display(), i + 1);
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}: not JSON: {e}", here())))?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(SUMMARY_SCHEMA) => {}
            Some(other) => {
                return Err(CliError::Data(format!(
                    "{}: schema `{other}`, expected `{SUMMARY_SCHEMA}`",
                    here()
                )))
            }
            None => return Err(CliError::Data(format!("{}: record has no schema field", here()))),
        }
        let record: SummaryRecord = serde_json::from_value(value)
            .map_err(|e| CliError::Data(format!("{}: does not match `{SUMMARY_SCHEMA}`: {e}", here())))?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no summary records", path.display())));
    }
    Ok(out)
}
