use super::{DataError, Dataset};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::path::Path;

/// How raw label strings map to `+1`; everything else becomes `-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// `+1` iff the cell equals this value.
    Equals(String),
    /// `+1` iff the cell differs from this value (e.g. "0" for multi-valued
    /// disease-severity targets).
    NotEquals(String),
}

impl LabelRule {
    fn is_positive(&self, cell: &str) -> bool {
        match self {
            LabelRule::Equals(v) => cell == v,
            LabelRule::NotEquals(v) => cell != v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: String,
    pub positive: LabelRule,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Columns excluded from the features (ids etc.).
    #[serde(default)]
    pub ignore_columns: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>, positive: LabelRule) -> Self {
        CsvOptions {
            label_column: label_column.into(),
            positive,
            delimiter: ',',
            ignore_columns: Vec::new(),
        }
    }
}

/// A loaded table plus the data-quality counters from loading it.
#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Rows dropped because a feature cell was missing or not numeric.
    pub dropped_rows: usize,
    /// Columns skipped because no row held a number there.
    pub non_numeric_columns: Vec<String>,
    /// Kept rows whose feature vector is all zeros (their margin is undefined).
    pub zero_norm_rows: usize,
}

/// Reads a delimited file with a header row.
///
/// Every column other than the label (and `ignore_columns`) is a feature
/// candidate. A column with no parsable cell at all is reported and
/// skipped; otherwise a row with any unparsable or empty feature cell is
/// dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<CsvLoad, DataError> {
    let path = path.as_ref();
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| *h == options.label_column)
        .ok_or_else(|| DataError::MissingLabelColumn {
            path: path.to_path_buf(),
            column: options.label_column.clone(),
        })?;
    let candidates: Vec<usize> = (0..header.len())
        .filter(|&j| j != label_idx && !options.ignore_columns.contains(&header[j]))
        .collect();

    let mut records = Vec::new();
    for record in reader.records() {
        records.push(record.map_err(csv_err)?);
    }

    let numeric_columns: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&j| records.iter().any(|r| parse_cell(r.get(j)).is_some()))
        .collect();
    let non_numeric_columns = candidates
        .iter()
        .filter(|j| !numeric_columns.contains(j))
        .map(|&j| header[j].clone())
        .collect();

    let d = numeric_columns.len();
    let mut values = Vec::with_capacity(records.len() * d);
    let mut labels = Vec::with_capacity(records.len());
    let mut dropped_rows = 0;
    'rows: for record in &records {
        let Some(label) = record.get(label_idx).filter(|s| !s.is_empty() && *s != "?") else {
            dropped_rows += 1;
            continue;
        };
        let start = values.len();
        for &j in &numeric_columns {
            match parse_cell(record.get(j)) {
                Some(v) => values.push(v),
                None => {
                    values.truncate(start);
                    dropped_rows += 1;
                    continue 'rows;
                }
            }
        }
        labels.push(if options.positive.is_positive(label) { 1.0 } else { -1.0 });
    }

    let m = labels.len();
    if m == 0 || d == 0 {
        return Err(DataError::NoUsableRows {
            path: path.to_path_buf(),
            dropped: dropped_rows,
        });
    }
    let features = Array2::from_shape_vec((m, d), values).expect("row-major buffer has m*d cells");
    let tag = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let names = numeric_columns.iter().map(|&j| header[j].clone()).collect();
    let dataset = Dataset::new(features, Array1::from(labels), tag)?.with_feature_names(names)?;
    let zero_norm_rows = dataset.zero_norm_rows();
    Ok(CsvLoad {
        dataset,
        dropped_rows,
        non_numeric_columns,
        zero_norm_rows,
    })
}

fn parse_cell(cell: Option<&str>) -> Option<f64> {
    cell.and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite())
}
