//! Shared pieces of the acceptance target: result lines, data locations and
//! the experiment configs of the reference datasets.

use ldp_moe::data::LabelRule;
use ldp_moe::model::LdpConfig;
use ldp_moe_cli::config::{DatasetSpec, ExperimentConfig};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const MNIST_DIR_ENV: &str = "LDP_MOE_MNIST_DIR";

/// Pass/fail of one criterion; `detail` carries the measured values.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "criterion {} {:<28} {} ({:.1} s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .expect("crate sits two levels below the workspace root")
        .to_path_buf()
}

pub fn mnist_dir() -> PathBuf {
    match std::env::var_os(MNIST_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => workspace_root().join("data/mnist"),
    }
}

pub fn breast_cancer(output_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: Some("breast_cancer".into()),
        dataset: Some(DatasetSpec::Csv {
            path: workspace_root().join("data/breast_cancer_wdbc.csv"),
            label_column: "diagnosis".into(),
            positive: LabelRule::Equals("M".into()),
            delimiter: ',',
            ignore_columns: vec![],
        }),
        output_dir: output_dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

pub fn heart(output_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: Some("heart".into()),
        dataset: Some(DatasetSpec::Csv {
            path: workspace_root().join("data/heart_cleveland.csv"),
            label_column: "num".into(),
            positive: LabelRule::NotEquals("0".into()),
            delimiter: ',',
            ignore_columns: vec![],
        }),
        output_dir: output_dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// `name` inside `dir`, or its gzipped copy when only that exists.
fn idx(dir: &Path, name: &str) -> PathBuf {
    let raw = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    if !raw.exists() && gz.exists() {
        gz
    } else {
        raw
    }
}

/// Digits 0 and 8 with the official test files as the test split.
pub fn mnist_zero_eight(output_dir: &Path, runs: usize, epochs: usize) -> ExperimentConfig {
    let dir = mnist_dir();
    let mut config = ExperimentConfig {
        name: Some("mnist_0v8".into()),
        dataset: Some(DatasetSpec::Mnist {
            train_images: idx(&dir, "train-images-idx3-ubyte"),
            train_labels: idx(&dir, "train-labels-idx1-ubyte"),
            test_images: Some(idx(&dir, "t10k-images-idx3-ubyte")),
            test_labels: Some(idx(&dir, "t10k-labels-idx1-ubyte")),
            digits: [0, 8],
        }),
        epsilons: vec![LdpConfig::Unconstrained, LdpConfig::Constrained { epsilon: 5.0 }],
        output_dir: output_dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    config.train.runs = runs;
    config.train.epochs = epochs;
    config
}
