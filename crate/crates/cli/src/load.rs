use crate::config::DatasetSpec;
use crate::digest::InputDigest;
use crate::error::CliError;
use ldp_moe::data::{load_csv, load_mnist_pair, read_cache, CsvOptions, Dataset};
use ldp_moe::train::{prepare_fixed, prepare_split, run_experiment_on_split, run_experiment_with};
use ldp_moe::train::{ExperimentOutput, PreparedSplit, RunEvent, TrainConfig};
use serde::{Deserialize, Serialize};

/// Either one table to split, or a train/test pair shipped with the data.
#[derive(Clone, Debug)]
pub enum Examples {
    Whole(Dataset),
    Fixed { train: Dataset, test: Dataset },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataStats {
    pub rows: usize,
    pub dim: usize,
    pub dropped_rows: usize,
    pub zero_norm_rows: usize,
    /// Present when the test split comes with the data.
    pub fixed_test_rows: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub examples: Examples,
    pub inputs: Vec<InputDigest>,
    pub stats: DataStats,
    pub notes: Vec<String>,
}

pub fn load(spec: &DatasetSpec) -> Result<Loaded, CliError> {
    let inputs = spec
        .paths()
        .into_iter()
        .map(InputDigest::of_file)
        .collect::<Result<Vec<_>, _>>()?;
    let mut notes = Vec::new();
    let mut dropped = 0;
    let examples = match spec {
        DatasetSpec::Csv {
            path,
            label_column,
            positive,
            delimiter,
            ignore_columns,
        } => {
            let options = CsvOptions {
                label_column: label_column.clone(),
                positive: positive.clone(),
                delimiter: *delimiter,
                ignore_columns: ignore_columns.clone(),
            };
            let load = load_csv(path, &options)?;
            dropped = load.dropped_rows;
            if load.dropped_rows > 0 {
                notes.push(format!(
                    "{}: dropped {} rows with missing or non-numeric features",
                    path.display(),
                    load.dropped_rows
                ));
            }
            if !load.non_numeric_columns.is_empty() {
                notes.push(format!(
                    "{}: skipped non-numeric columns {:?}",
                    path.display(),
                    load.non_numeric_columns
                ));
            }
            Examples::Whole(load.dataset)
        }
        DatasetSpec::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            digits,
        } => {
            let train = load_mnist_pair(train_images, train_labels, digits[0], digits[1])?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => Examples::Fixed {
                    train,
                    test: load_mnist_pair(ti, tl, digits[0], digits[1])?,
                },
                (None, None) => Examples::Whole(train),
                _ => {
                    return Err(CliError::Config(
                        "mnist dataset needs both `test_images` and `test_labels`, or neither".into(),
                    ))
                }
            }
        }
        DatasetSpec::Cache { path } => {
            let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let data = read_cache(std::io::BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Examples::Whole(data)
        }
    };
    let stats = match &examples {
        Examples::Whole(d) => DataStats {
            rows: d.len(),
            dim: d.dim(),
            dropped_rows: dropped,
            zero_norm_rows: d.zero_norm_rows(),
            fixed_test_rows: None,
        },
        Examples::Fixed { train, test } => {
            if train.dim() != test.dim() {
                return Err(CliError::Data(format!(
                    "train has {} features but test has {}",
                    train.dim(),
                    test.dim()
                )));
            }
            DataStats {
                rows: train.len() + test.len(),
                dim: train.dim(),
                dropped_rows: dropped,
                zero_norm_rows: train.zero_norm_rows() + test.zero_norm_rows(),
                fixed_test_rows: Some(test.len()),
            }
        }
    };
    if stats.zero_norm_rows > 0 {
        notes.push(format!("{} rows have an all-zero feature vector", stats.zero_norm_rows));
    }
    Ok(Loaded {
        examples,
        inputs,
        stats,
        notes,
    })
}

impl Loaded {
    pub fn run(
        &self,
        config: &TrainConfig,
        on_event: &mut dyn FnMut(RunEvent<'_>),
    ) -> Result<ExperimentOutput, CliError> {
        let out = match &self.examples {
            Examples::Whole(d) => run_experiment_with(config, d, on_event)?,
            Examples::Fixed { train, test } => run_experiment_on_split(config, train, test, on_event)?,
        };
        Ok(out)
    }

    /// The split run `run` of `config` trained on.
    pub fn prepared(&self, config: &TrainConfig, run: usize) -> Result<PreparedSplit, CliError> {
        let p = match &self.examples {
            Examples::Whole(d) => prepare_split(config, d, run)?,
            Examples::Fixed { train, test } => prepare_fixed(config, train, test)?,
        };
        Ok(p)
    }
}
