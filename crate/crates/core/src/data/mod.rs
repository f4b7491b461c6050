//! Datasets: loaders for delimited text and MNIST IDX files, seeded
//! train/test splitting, train-only standardization and a binary cache.

mod cache;
mod csv_loader;
mod mnist;

pub use cache::{load_or_build, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use csv_loader::{load_csv, CsvLoad, CsvOptions, LabelRule};
pub use mnist::{load_mnist_pair, read_idx_images, read_idx_labels, IdxImages};

use crate::numerics::RandomSource;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: label column `{column}` not found in header")]
    MissingLabelColumn { path: PathBuf, column: String },
    #[error("{path}: no usable rows ({dropped} dropped)")]
    NoUsableRows { path: PathBuf, dropped: usize },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("digit pair ({0}, {0}) is degenerate")]
    DegeneratePair(u8),
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(f64),
    #[error("non-finite feature at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("{0} labels for {1} feature rows")]
    LengthMismatch(usize, usize),
    #[error("dataset is empty")]
    Empty,
    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} examples, found {found}")]
    TooSmall { needed: usize, found: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

/// Feature matrix (one example per row) with labels in `{-1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    feature_names: Option<Vec<String>>,
    source_tag: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Array1<f64>,
        source_tag: impl Into<String>,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::LengthMismatch(labels.len(), features.nrows()));
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(DataError::InvalidLabel(bad));
        }
        for ((row, column), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, column });
            }
        }
        Ok(Dataset {
            features: features.as_standard_layout().into_owned(),
            labels,
            feature_names: None,
            source_tag: source_tag.into(),
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: self.dim(),
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; kept for the `len`/`is_empty` convention.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn set_source_tag(&mut self, tag: impl Into<String>) {
        self.source_tag = tag.into();
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        if indices.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
            source_tag: self.source_tag.clone(),
        })
    }

    /// Number of rows whose feature vector is exactly zero.
    pub fn zero_norm_rows(&self) -> usize {
        self.features
            .rows()
            .into_iter()
            .filter(|r| r.iter().all(|&v| v == 0.0))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Seeded shuffle; the first `ceil(train_fraction * m)` rows go to train.
pub fn split(data: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::BadFraction(spec.train_fraction));
    }
    let m = data.len();
    if m < 4 {
        return Err(DataError::TooSmall { needed: 4, found: m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    RandomSource::new(spec.seed).shuffle(&mut order);
    // the tolerance keeps products like 0.7 * 10 = 7.000000000000001 at 7
    let n_train = ((spec.train_fraction * m as f64 - 1e-9).ceil() as usize).clamp(1, m - 1);
    let (train_idx, test_idx) = order.split_at(n_train);
    Ok((data.select(train_idx)?, data.select(test_idx)?))
}

/// Per-feature affine map fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Divisor per feature; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(train: &Dataset) -> Standardization {
        let x = train.features();
        let m = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                mean.push(lo);
                scale.push(1.0);
                continue;
            }
            let mu = col.sum() / m;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
            mean.push(mu);
            scale.push(var.sqrt());
        }
        Standardization { mean, scale }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset, DataError> {
        if data.dim() != self.mean.len() {
            return Err(DataError::DimensionMismatch {
                expected: self.mean.len(),
                found: data.dim(),
            });
        }
        let mut out = data.clone();
        for (j, mut col) in out.features.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - mu) / s);
        }
        Ok(out)
    }
}

/// Fits on `train` and transforms both splits.
pub fn standardize(
    train: &Dataset,
    test: &Dataset,
) -> Result<(Dataset, Dataset, Standardization), DataError> {
    let stats = Standardization::fit(train);
    let train_t = stats.apply(train)?;
    let test_t = stats.apply(test)?;
    Ok((train_t, test_t, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(m: usize) -> Dataset {
        let x = Array2::from_shape_fn((m, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Array1::from_shape_fn(m, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        Dataset::new(x, y, "toy").unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_values() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            Dataset::new(x.clone(), array![1.0, 0.0], "t"),
            Err(DataError::InvalidLabel(_))
        ));
        assert!(matches!(
            Dataset::new(array![[1.0], [f64::NAN]], array![1.0, -1.0], "t"),
            Err(DataError::NonFinite { row: 1, column: 0 })
        ));
        assert!(matches!(
            Dataset::new(Array2::zeros((0, 3)), Array1::zeros(0), "t"),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split(&toy(100), SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (75, 25));
        let (tr, te) = split(&toy(5), SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        let spec = SplitSpec { train_fraction: 0.7, seed: 1 };
        let (tr, _) = split(&toy(10), spec).unwrap();
        assert_eq!(tr.len(), 7);
        assert!(split(&toy(3), SplitSpec::default()).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let data = toy(37);
        let spec = SplitSpec { train_fraction: 0.75, seed: 9 };
        let (a_tr, a_te) = split(&data, spec).unwrap();
        let (b_tr, b_te) = split(&data, spec).unwrap();
        assert_eq!(a_tr, b_tr);
        assert_eq!(a_te, b_te);
        // every row id (first feature / 2) appears exactly once across both parts
        let mut ids: Vec<usize> = a_tr
            .features()
            .column(0)
            .iter()
            .chain(a_te.features().column(0).iter())
            .map(|v| (*v / 2.0) as usize)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..37).collect::<Vec<_>>());
        let (c_tr, _) = split(&data, SplitSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a_tr, c_tr);
    }

    #[test]
    fn standardize_examples() {
        // feature 0 has mean 5 and population std 2; feature 1 is constant
        let train = Dataset::new(
            array![[3.0, 7.0], [7.0, 7.0], [3.0, 7.0], [7.0, 7.0]],
            array![1.0, -1.0, 1.0, -1.0],
            "t",
        )
        .unwrap();
        let test = Dataset::new(array![[9.0, 7.0]], array![1.0], "t").unwrap();
        let (tr, te, stats) = standardize(&train, &test).unwrap();
        assert_eq!(stats.mean, vec![5.0, 7.0]);
        assert_eq!(te.features()[[0, 0]], 2.0);
        assert!(tr.features().column(1).iter().all(|&v| v == 0.0));
        assert!(te.features().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn restandardizing_train_is_identity() {
        let mut rng = RandomSource::new(4);
        let x = Array2::from_shape_fn((50, 4), |(_, j)| rng.uniform_in(-3.0, 10.0) * (j + 1) as f64);
        let y = Array1::from_shape_fn(50, |i| if i % 3 == 0 { 1.0 } else { -1.0 });
        let data = Dataset::new(x, y, "r").unwrap();
        let (tr, _, _) = standardize(&data, &data).unwrap();
        let again = Standardization::fit(&tr);
        for j in 0..4 {
            assert!(again.mean[j].abs() < 1e-12);
            assert!((again.scale[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardization_ignores_test_rows() {
        let data = toy(20);
        let (train, test) = split(&data, SplitSpec::default()).unwrap();
        let (_, _, before) = standardize(&train, &test).unwrap();
        let mut x = test.features().to_owned();
        x.mapv_inplace(|v| v * 100.0 + 3.0);
        let perturbed = Dataset::new(x, test.labels().to_owned(), "p").unwrap();
        let (_, _, after) = standardize(&train, &perturbed).unwrap();
        assert_eq!(before, after);
    }
}
