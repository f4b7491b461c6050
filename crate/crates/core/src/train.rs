//! Seeded minibatch SGD and multi-run aggregation.
//!
//! Run `k` of an experiment uses seed `base_seed + k`. Initialization draws
//! from substream 0 of that seed and minibatch shuffling from substream 1,
//! so changing the batch size never changes the initial weights.

use crate::data::{split, standardize, DataError, Dataset, SplitSpec, Standardization};
use crate::grad::batch_loss_and_gradients;
use crate::model::{empirical_risk, ExpertBank, GatingParams, LdpConfig, MoEModel, ModelError, DEFAULT_HIDDEN_WIDTH};
use crate::numerics::{Probability, RandomSource};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Minibatch size; `Full` uses the whole training split every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchSizeRepr", into = "BatchSizeRepr")]
pub enum BatchSize {
    Full,
    Rows(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchSizeRepr {
    Rows(usize),
    Word(String),
}

impl TryFrom<BatchSizeRepr> for BatchSize {
    type Error = String;
    fn try_from(repr: BatchSizeRepr) -> Result<Self, String> {
        match repr {
            BatchSizeRepr::Rows(0) => Err("batch size must be positive".into()),
            BatchSizeRepr::Rows(k) => Ok(BatchSize::Rows(k)),
            BatchSizeRepr::Word(w) => w.parse(),
        }
    }
}

impl From<BatchSize> for BatchSizeRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchSizeRepr::Word("full".into()),
            BatchSize::Rows(k) => BatchSizeRepr::Rows(k),
        }
    }
}

impl FromStr for BatchSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "full" => Ok(BatchSize::Full),
            t => match t.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("batch size must be a positive integer or `full`, got `{s}`")),
                Ok(k) => Ok(BatchSize::Rows(k)),
            },
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Rows(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub runs: usize,
    pub base_seed: u64,
    pub ldp: LdpConfig,
    /// Uniform init half-width is `init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    pub experts: usize,
    pub hidden: usize,
    pub split: SplitSpec,
    /// Draw a fresh split per run (seed `split.seed + k`) instead of one
    /// split shared by all runs.
    pub resplit: bool,
    /// Fit a per-feature standardization on each training split.
    pub standardize: bool,
    /// Project each expert row back onto this ball after every step.
    pub max_expert_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 1000,
            batch_size: BatchSize::Rows(64),
            runs: 10,
            base_seed: 0,
            ldp: LdpConfig::Unconstrained,
            init_scale: 1.0,
            experts: 100,
            hidden: DEFAULT_HIDDEN_WIDTH,
            split: SplitSpec::default(),
            resplit: false,
            standardize: true,
            max_expert_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad(format!("init_scale must be nonnegative, got {}", self.init_scale));
        }
        if self.experts == 0 || self.hidden == 0 {
            return bad("experts and hidden must be at least 1".into());
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.split.train_fraction));
        }
        if let Some(cap) = self.max_expert_norm {
            if !(cap.is_finite() && cap > 0.0) {
                return bad(format!("max_expert_norm must be positive, got {cap}"));
            }
        }
        if let LdpConfig::Constrained { epsilon } = self.ldp {
            LdpConfig::constrained(epsilon)?;
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

fn uniform_matrix(rng: &mut RandomSource, rows: usize, cols: usize, half_width: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        if half_width == 0.0 {
            0.0
        } else {
            rng.uniform_in(-half_width, half_width)
        }
    })
}

/// Weights uniform in `+-init_scale / sqrt(fan_in)`, biases zero.
pub fn init_model(
    d: usize,
    n: usize,
    hidden: usize,
    ldp: LdpConfig,
    rng: &mut RandomSource,
    init_scale: f64,
) -> Result<MoEModel, ModelError> {
    let width = |fan_in: usize| init_scale / (fan_in as f64).sqrt();
    let experts = uniform_matrix(rng, n, d, width(d));
    let gating = GatingParams {
        w1: uniform_matrix(rng, hidden, d, width(d)),
        b1: Array1::zeros(hidden),
        w2: uniform_matrix(rng, hidden, hidden, width(hidden)),
        b2: Array1::zeros(hidden),
        w3: uniform_matrix(rng, n, hidden, width(hidden)),
        b3: Array1::zeros(n),
    };
    MoEModel::new(ExpertBank::new(experts)?, gating, ldp)
}

/// Mean minibatch loss over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_batch_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedRun {
    pub model: MoEModel,
    pub train_risk: Probability,
    pub test_risk: Probability,
}

fn project_experts(experts: &mut ExpertBank, cap: f64) {
    for mut row in experts.weights.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > cap {
            row *= cap / norm;
        }
    }
}

fn describe_norms(model: &MoEModel) -> String {
    model
        .parameter_norms()
        .iter()
        .map(|(name, v)| format!("|{name}|={v:.3e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// SGD on `train` from `init`; `on_epoch` sees every completed epoch.
pub fn train_from(
    config: &TrainConfig,
    init: MoEModel,
    train: &Dataset,
    test: &Dataset,
    shuffle_rng: &mut RandomSource,
    on_epoch: &mut dyn FnMut(EpochLog),
) -> Result<TrainedRun, TrainError> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Empty.into());
    }
    if train.dim() != init.d() || test.dim() != init.d() {
        return Err(DataError::DimensionMismatch {
            expected: init.d(),
            found: if train.dim() != init.d() { train.dim() } else { test.dim() },
        }
        .into());
    }
    let mut model = init;
    let m = train.len();
    let rows = match config.batch_size {
        BatchSize::Full => m,
        BatchSize::Rows(k) => k.min(m),
    };
    let (x, y) = (train.features(), train.labels());
    let mut order: Vec<usize> = (0..m).collect();
    for epoch in 1..=config.epochs {
        if rows < m {
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(rows) {
            let step = if rows == m {
                batch_loss_and_gradients(&model, x, y)
            } else {
                let bx = x.select(Axis(0), chunk);
                let by = y.select(Axis(0), chunk);
                batch_loss_and_gradients(&model, bx.view(), by.view())
            };
            let (loss, grads) = match step {
                Ok(v) => v,
                Err(ModelError::NonFinite(what)) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: format!("non-finite {what}; {}", describe_norms(&model)),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("non-finite loss or gradient; {}", describe_norms(&model)),
                });
            }
            grads.descend(&mut model, config.learning_rate);
            if let Some(cap) = config.max_expert_norm {
                project_experts(&mut model.experts, cap);
            }
            loss_sum += loss;
            batches += 1;
        }
        on_epoch(EpochLog {
            epoch,
            mean_batch_loss: loss_sum / batches as f64,
        });
    }
    let risk = |data: &Dataset, model: &MoEModel| match empirical_risk(model, data) {
        Err(ModelError::NonFinite(what)) => Err(TrainError::Diverged {
            epoch: config.epochs,
            reason: format!("non-finite {what} in final model"),
        }),
        other => other.map_err(TrainError::from),
    };
    let train_risk = risk(train, &model)?;
    let test_risk = risk(test, &model)?;
    Ok(TrainedRun {
        model,
        train_risk,
        test_risk,
    })
}

/// Initializes from `seed` and trains.
pub fn train_once(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    on_epoch: &mut dyn FnMut(EpochLog),
) -> Result<TrainedRun, TrainError> {
    config.validate()?;
    let root = RandomSource::new(seed);
    let mut init_rng = root.substream(0);
    let mut shuffle_rng = root.substream(1);
    let init = init_model(
        train.dim(),
        config.experts,
        config.hidden,
        config.ldp,
        &mut init_rng,
        config.init_scale,
    )?;
    train_from(config, init, train, test, &mut shuffle_rng, on_epoch)
}

/// Train/test data for one run, after the configured split and scaling.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Option<Standardization>,
    pub split: SplitSpec,
}

pub fn prepare_split(config: &TrainConfig, data: &Dataset, run: usize) -> Result<PreparedSplit, TrainError> {
    let mut spec = config.split;
    if config.resplit {
        spec.seed = spec.seed.wrapping_add(run as u64);
    }
    let (train, test) = split(data, spec)?;
    if config.standardize {
        let (train, test, stats) = standardize(&train, &test)?;
        Ok(PreparedSplit {
            train,
            test,
            standardization: Some(stats),
            split: spec,
        })
    } else {
        Ok(PreparedSplit {
            train,
            test,
            standardization: None,
            split: spec,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed { train_risk: f64, test_risk: f64 },
    Failed { epoch: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: RunOutcome,
}

/// Mean and population standard deviation `sqrt(sum (r - mean)^2 / N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // rounding may push the mean of equal values off the value itself
        let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ldp: LdpConfig,
    pub runs: Vec<RunRecord>,
    pub completed: usize,
    pub failed: usize,
    /// Over completed runs; absent when every run failed.
    pub train: Option<MeanStd>,
    pub test: Option<MeanStd>,
}

impl RunSummary {
    pub fn from_records(ldp: LdpConfig, runs: Vec<RunRecord>) -> RunSummary {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in &runs {
            if let RunOutcome::Completed { train_risk, test_risk } = r.outcome {
                train.push(train_risk);
                test.push(test_risk);
            }
        }
        RunSummary {
            ldp,
            completed: train.len(),
            failed: runs.len() - train.len(),
            train: MeanStd::of(&train),
            test: MeanStd::of(&test),
            runs,
        }
    }
}

/// Progress notifications from `run_experiment_with`.
#[derive(Clone, Debug)]
pub enum RunEvent<'a> {
    Epoch { run: usize, log: EpochLog },
    Finished { run: usize, record: &'a RunRecord },
}

pub struct ExperimentOutput {
    pub summary: RunSummary,
    /// Final model of each run, `None` for failed runs.
    pub models: Vec<Option<MoEModel>>,
}

pub fn run_experiment_with(
    config: &TrainConfig,
    data: &Dataset,
    on_event: &mut dyn FnMut(RunEvent<'_>),
) -> Result<ExperimentOutput, TrainError> {
    config.validate()?;
    if data.len() < 8 {
        return Err(DataError::TooSmall {
            needed: 8,
            found: data.len(),
        }
        .into());
    }
    let shared = if config.resplit {
        None
    } else {
        Some(prepare_split(config, data, 0)?)
    };
    run_loop(
        config,
        &mut |run| match &shared {
            Some(p) => Ok(Cow::Borrowed(p)),
            None => prepare_split(config, data, run).map(Cow::Owned),
        },
        on_event,
    )
}

/// Like `run_experiment_with` on a split fixed by the caller; `split` and
/// `resplit` in the config are ignored.
pub fn run_experiment_on_split(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    on_event: &mut dyn FnMut(RunEvent<'_>),
) -> Result<ExperimentOutput, TrainError> {
    config.validate()?;
    let prepared = prepare_fixed(config, train, test)?;
    run_loop(config, &mut |_| Ok(Cow::Borrowed(&prepared)), on_event)
}

/// Scales a caller-supplied split the way `prepare_split` scales its own.
pub fn prepare_fixed(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<PreparedSplit, TrainError> {
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Empty.into());
    }
    let (train, test, standardization) = if config.standardize {
        let (a, b, stats) = standardize(train, test)?;
        (a, b, Some(stats))
    } else {
        (train.clone(), test.clone(), None)
    };
    Ok(PreparedSplit {
        train,
        test,
        standardization,
        split: config.split,
    })
}

fn run_loop<'p>(
    config: &TrainConfig,
    prepare: &mut dyn FnMut(usize) -> Result<Cow<'p, PreparedSplit>, TrainError>,
    on_event: &mut dyn FnMut(RunEvent<'_>),
) -> Result<ExperimentOutput, TrainError> {
    let mut records = Vec::with_capacity(config.runs);
    let mut models = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let prepared = prepare(run)?;
        let seed = config.run_seed(run);
        let result = train_once(config, &prepared.train, &prepared.test, seed, &mut |log| {
            on_event(RunEvent::Epoch { run, log })
        });
        let (outcome, model) = match result {
            Ok(t) => (
                RunOutcome::Completed {
                    train_risk: t.train_risk.get(),
                    test_risk: t.test_risk.get(),
                },
                Some(t.model),
            ),
            Err(TrainError::Diverged { epoch, reason }) => (RunOutcome::Failed { epoch, reason }, None),
            Err(e) => return Err(e),
        };
        records.push(RunRecord { run, seed, outcome });
        on_event(RunEvent::Finished {
            run,
            record: records.last().expect("just pushed"),
        });
        models.push(model);
    }
    Ok(ExperimentOutput {
        summary: RunSummary::from_records(config.ldp, records),
        models,
    })
}

pub fn run_experiment(config: &TrainConfig, data: &Dataset) -> Result<RunSummary, TrainError> {
    Ok(run_experiment_with(config, data, &mut |_| {})?.summary)
}
