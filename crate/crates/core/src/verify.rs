//! Brute-force checks of the privacy and mixture inequalities on finite
//! worlds small enough to enumerate, plus a simulation of bound coverage.

use crate::bounds::{
    certify, linear_expert_rademacher, rademacher_ldp_bound, BoundError, BoundInputs, CertifyOptions,
    RademacherInput,
};
use crate::data::Dataset;
use crate::model::{gate_batch, per_example_risk, LdpConfig, MoEModel, ModelError};
use crate::numerics::{binary_kl, softmax_in_place, NumericsError, Probability, RandomSource};
use crate::train::{train_once, BatchSize, TrainConfig, TrainError};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_INSTANCES: usize = 12;
pub const MAX_EXPERTS: usize = 6;
pub const SLACK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("finite instance: {0}")]
    Instance(String),
    #[error("function table entry {value} exceeds the bound {bound}")]
    Unbounded { value: f64, bound: f64 },
    #[error("epsilon must be finite and nonnegative, got {0}")]
    Epsilon(f64),
    #[error("need at least {min} {what}, got {found}")]
    TooFew { what: &'static str, min: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// A world with finitely many inputs: its gate, the expected loss of every
/// expert on every input, the data distribution and one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteInstance {
    /// instance x expert, rows stochastic.
    pub gate_table: Array2<f64>,
    /// instance x expert, entries in `[0, 1]`.
    pub per_expert_losses: Array2<f64>,
    pub data_weights: Vec<f64>,
    pub sample: Vec<usize>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl FiniteInstance {
    pub fn instance_count(&self) -> usize {
        self.gate_table.nrows()
    }

    pub fn expert_count(&self) -> usize {
        self.gate_table.ncols()
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::Instance(m));
        let (k, n) = self.gate_table.dim();
        if k == 0 || k > MAX_INSTANCES || n == 0 || n > MAX_EXPERTS {
            return bad(format!("sizes {k} x {n} outside 1..={MAX_INSTANCES} x 1..={MAX_EXPERTS}"));
        }
        if self.per_expert_losses.dim() != (k, n) {
            return bad(format!("loss table {:?}, gate table {:?}", self.per_expert_losses.dim(), (k, n)));
        }
        if self.data_weights.len() != k {
            return bad(format!("{} data weights for {k} instances", self.data_weights.len()));
        }
        for row in self.gate_table.outer_iter() {
            let total: f64 = row.sum();
            if row.iter().any(|&g| !(g > 0.0)) || (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                return bad(format!("gate row {row} is not a positive probability vector"));
            }
        }
        if self.per_expert_losses.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("losses must lie in [0, 1]".into());
        }
        let total: f64 = self.data_weights.iter().sum();
        if self.data_weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > ROW_SUM_TOLERANCE {
            return bad("data weights are not a probability vector".into());
        }
        if self.sample.is_empty() || self.sample.iter().any(|&s| s >= k) {
            return bad("sample must be a nonempty list of instance indices".into());
        }
        Ok(())
    }

    /// `R(g, Q)` under the data weights.
    pub fn true_risk(&self) -> f64 {
        self.data_weights
            .iter()
            .enumerate()
            .map(|(x, w)| w * self.mixture_loss(x))
            .sum()
    }

    /// `R_S(g, Q)` over the sample.
    pub fn empirical_risk(&self) -> f64 {
        self.sample.iter().map(|&x| self.mixture_loss(x)).sum::<f64>() / self.sample.len() as f64
    }

    /// `R(Q_i)` for every expert.
    pub fn expert_true_risks(&self) -> Vec<f64> {
        (0..self.expert_count())
            .map(|i| {
                self.data_weights
                    .iter()
                    .enumerate()
                    .map(|(x, w)| w * self.per_expert_losses[[x, i]])
                    .sum()
            })
            .collect()
    }

    /// `R_S(Q_i)` for every expert.
    pub fn expert_empirical_risks(&self) -> Vec<f64> {
        let m = self.sample.len() as f64;
        (0..self.expert_count())
            .map(|i| self.sample.iter().map(|&x| self.per_expert_losses[[x, i]]).sum::<f64>() / m)
            .collect()
    }

    fn mixture_loss(&self, x: usize) -> f64 {
        self.gate_table
            .row(x)
            .iter()
            .zip(self.per_expert_losses.row(x))
            .map(|(g, l)| g * l)
            .sum()
    }
}

/// Privacy budget of a generated gate table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GateBudget {
    Epsilon(f64),
    Unconstrained,
}

const UNCONSTRAINED_LOGIT_RANGE: f64 = 4.0;
const BIAS_RANGE: f64 = 2.0;

/// Random gate table: softmax of logits uniform in `[-eps/4, eps/4]` plus
/// one random bias per expert shared by every row.
pub fn make_ldp_gate_table(
    instance_count: usize,
    expert_count: usize,
    budget: GateBudget,
    rng: &mut RandomSource,
) -> Result<Array2<f64>, VerifyError> {
    let half = match budget {
        GateBudget::Epsilon(e) if e.is_finite() && e >= 0.0 => e / 4.0,
        GateBudget::Epsilon(e) => return Err(VerifyError::Epsilon(e)),
        GateBudget::Unconstrained => UNCONSTRAINED_LOGIT_RANGE,
    };
    let biases: Vec<f64> = (0..expert_count).map(|_| rng.uniform_in(-BIAS_RANGE, BIAS_RANGE)).collect();
    let mut table = Array2::zeros((instance_count, expert_count));
    for mut row in table.outer_iter_mut() {
        for (cell, b) in row.iter_mut().zip(&biases) {
            let f = if half == 0.0 { 0.0 } else { rng.uniform_in(-half, half) };
            *cell = f + b;
        }
        softmax_in_place(row.as_slice_mut().expect("row-major table"));
    }
    Ok(table)
}

/// Two-row table whose first expert has ratio exactly `e^eps + 0.1`.
pub fn faulty_gate_table(epsilon: f64) -> Array2<f64> {
    let ratio = epsilon.exp() + 0.1;
    let low = 0.5 / ratio;
    let high = low * ratio;
    Array2::from_shape_vec((2, 2), vec![high, 1.0 - high, low, 1.0 - low]).expect("2x2")
}

/// `max_{i, x, x'} ln(g_i(x) / g_i(x'))` over the rows of a gate table.
pub fn max_log_ratio(table: ArrayView2<'_, f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for column in table.columns() {
        let (lo, hi) = column
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g.ln()), hi.max(g.ln())));
        worst = worst.max(hi - lo);
    }
    worst
}

/// Shape of the comparison function in the mixture inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaKind {
    /// `v - u`
    Linear,
    /// `v - 2 lambda u / (2 lambda - 1)`
    Catoni { lambda: f64 },
    /// `kl(u || v)`, only where `u <= v`
    Kl,
}

impl DeltaKind {
    fn eval(self, u: f64, v: f64) -> f64 {
        match self {
            DeltaKind::Linear => v - u,
            DeltaKind::Catoni { lambda } => v - 2.0 * lambda / (2.0 * lambda - 1.0) * u,
            DeltaKind::Kl => binary_kl(Probability::saturating(u), Probability::saturating(v)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeltaKind::Linear => "linear",
            DeltaKind::Catoni { .. } => "catoni",
            DeltaKind::Kl => "kl",
        }
    }
}

/// Worst case over `x'` of `rhs - lhs` for one instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    /// False when the kl case falls outside `R >= e^{2 eps} R_S`; such a
    /// case does not constrain anything.
    pub applicable: bool,
    pub xprime: usize,
}

/// Evaluates `Delta(e^eps R_S(g,Q), e^-eps R(g,Q)) <= E_{i~g(x')} Delta(R_S(Q_i), R(Q_i))`
/// at every `x'` of the instance and reports the tightest one.
pub fn check_lemma_delta(instance: &FiniteInstance, epsilon: f64, kind: DeltaKind) -> Result<LemmaCheck, VerifyError> {
    instance.validate()?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(VerifyError::Epsilon(epsilon));
    }
    if let DeltaKind::Catoni { lambda } = kind {
        if !(lambda > 0.5) {
            return Err(BoundError::Lambda(lambda).into());
        }
    }
    let e = epsilon.exp();
    let (risk, emp) = (instance.true_risk(), instance.empirical_risk());
    let (u, v) = (e * emp, risk / e);
    if kind == DeltaKind::Kl && !(u <= v) {
        return Ok(LemmaCheck {
            lhs: f64::NAN,
            rhs: f64::NAN,
            slack: f64::INFINITY,
            holds: true,
            applicable: false,
            xprime: 0,
        });
    }
    let lhs = kind.eval(u, v);
    let per_expert: Vec<f64> = instance
        .expert_empirical_risks()
        .iter()
        .zip(instance.expert_true_risks())
        .map(|(&ui, vi)| kind.eval(ui, vi))
        .collect();
    let mut worst: Option<LemmaCheck> = None;
    for (xprime, row) in instance.gate_table.outer_iter().enumerate() {
        let rhs: f64 = row.iter().zip(&per_expert).map(|(g, d)| g * d).sum();
        let slack = if rhs == f64::INFINITY { f64::INFINITY } else { rhs - lhs };
        if worst.as_ref().is_none_or(|w| slack < w.slack) {
            worst = Some(LemmaCheck {
                lhs,
                rhs,
                slack,
                holds: slack >= -SLACK_TOLERANCE,
                applicable: true,
                xprime,
            });
        }
    }
    Ok(worst.expect("at least one instance"))
}

/// Random finite world whose gate satisfies `epsilon`-LDP.
pub fn random_instance(rng: &mut RandomSource, epsilon: f64) -> Result<FiniteInstance, VerifyError> {
    let k = 1 + rng.index_below(MAX_INSTANCES);
    let n = 1 + rng.index_below(MAX_EXPERTS);
    let gate_table = make_ldp_gate_table(k, n, GateBudget::Epsilon(epsilon), rng)?;
    let per_expert_losses = Array2::from_shape_fn((k, n), |_| match rng.index_below(10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.uniform(),
    });
    let mut data_weights: Vec<f64> = (0..k)
        .map(|_| if rng.index_below(6) == 0 { 0.0 } else { rng.uniform() })
        .collect();
    let total: f64 = data_weights.iter().sum();
    if total == 0.0 {
        data_weights = vec![1.0 / k as f64; k];
    } else {
        data_weights.iter_mut().for_each(|w| *w /= total);
    }
    let m = 1 + rng.index_below(20);
    let sample = (0..m)
        .map(|_| rng.sample_categorical(&data_weights))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FiniteInstance {
        gate_table,
        per_expert_losses,
        data_weights,
        sample,
    })
}

/// Max log-ratio of the softmax gate `softmax(beta f(x) + bias)` over a
/// table of function values with `|f| <= b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxLdpCheck {
    pub max_log_ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn check_softmax_ldp(
    f_table: ArrayView2<'_, f64>,
    b: f64,
    beta: f64,
    biases: &[f64],
) -> Result<SoftmaxLdpCheck, VerifyError> {
    if let Some(&value) = f_table.iter().find(|v| !(v.abs() <= b)) {
        return Err(VerifyError::Unbounded { value, bound: b });
    }
    if biases.len() != f_table.ncols() {
        return Err(NumericsError::LengthMismatch {
            left: f_table.ncols(),
            right: biases.len(),
        }
        .into());
    }
    let mut log_gate = Array2::zeros(f_table.dim());
    for (x, row) in f_table.outer_iter().enumerate() {
        let scores: Vec<f64> = row.iter().zip(biases).map(|(f, c)| beta * f + c).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
        for (i, s) in scores.iter().enumerate() {
            log_gate[[x, i]] = s - lse;
        }
    }
    let mut worst: f64 = 0.0;
    for column in log_gate.columns() {
        let (lo, hi) = column
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
        worst = worst.max(hi - lo);
    }
    let bound = 4.0 * beta * b;
    Ok(SoftmaxLdpCheck {
        max_log_ratio: worst,
        bound,
        holds: worst <= bound + SLACK_TOLERANCE,
    })
}

/// Largest `|ln g_i(a) - ln g_i(b)|` over `pairs` random pairs of rows.
pub fn empirical_log_ratio(
    model: &MoEModel,
    points: ArrayView2<'_, f64>,
    pairs: usize,
    rng: &mut RandomSource,
) -> Result<f64, VerifyError> {
    if points.nrows() < 2 {
        return Err(VerifyError::TooFew {
            what: "points",
            min: 2,
            found: points.nrows(),
        });
    }
    let log_gate = gate_batch(model, points)?.mapv(f64::ln);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = rng.index_below(points.nrows());
        let b = rng.index_below(points.nrows());
        let ratio = log_gate
            .row(a)
            .iter()
            .zip(log_gate.row(b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VacuousnessDemo {
    pub empirical_risk: f64,
    pub empirical_risk_lower: f64,
    pub bound_value: f64,
}

pub const DEMO_INSTANCES: usize = 20;
pub const DEMO_DELTA: f64 = 0.05;

/// Two constant experts (index 0 always predicts +1, index 1 always -1)
/// routed by a random `epsilon`-LDP gate over a finite input set, on `m`
/// balanced 0-1 examples.
pub fn nonadaptive_vacuousness_demo(epsilon: f64, m: usize, rng: &mut RandomSource) -> Result<VacuousnessDemo, VerifyError> {
    if m == 0 {
        return Err(VerifyError::TooFew { what: "examples", min: 1, found: 0 });
    }
    let table = make_ldp_gate_table(DEMO_INSTANCES, 2, GateBudget::Epsilon(epsilon), rng)?;
    // wrong[0]: expert that errs on y = +1 (index 1); wrong[1] for y = -1
    let column_max = |i: usize| table.column(i).iter().cloned().fold(0.0, f64::max);
    let best = [column_max(1), column_max(0)];
    let (mut risk, mut lower) = (0.0, 0.0);
    for _ in 0..m {
        let x = rng.index_below(DEMO_INSTANCES);
        let positive = rng.uniform() < 0.5;
        let (wrong, slot) = if positive { (1, 0) } else { (0, 1) };
        risk += table[[x, wrong]];
        lower += best[slot];
    }
    let mf = m as f64;
    let empirical_risk = risk / mf;
    let empirical_risk_lower = (-epsilon).exp() * lower / mf;
    let mut inputs = BoundInputs::uniform(m, 2, DEMO_DELTA, epsilon, Probability::saturating(empirical_risk));
    inputs.gate_at_xprime = table.row(0).to_vec();
    let bound_value = rademacher_ldp_bound(&inputs)?;
    Ok(VacuousnessDemo {
        empirical_risk,
        empirical_risk_lower,
        bound_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub exact: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub within_three_sigma: bool,
}

/// Estimates `R(g, Q)` by drawing `x ~ D`, `i ~ g(x)` and averaging the loss.
pub fn monte_carlo_risk(instance: &FiniteInstance, samples: usize, rng: &mut RandomSource) -> Result<MonteCarloCheck, VerifyError> {
    instance.validate()?;
    if samples < 2 {
        return Err(VerifyError::TooFew { what: "samples", min: 2, found: samples });
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = rng.sample_categorical(&instance.data_weights)?;
        let row = instance.gate_table.row(x);
        let i = rng.sample_categorical(row.as_slice().expect("row-major table"))?;
        let loss = instance.per_expert_losses[[x, i]];
        sum += loss;
        sum_sq += loss * loss;
    }
    let n = samples as f64;
    let estimate = sum / n;
    let variance = ((sum_sq / n) - estimate * estimate).max(0.0) * n / (n - 1.0);
    let std_error = (variance / n).sqrt();
    let exact = instance.true_risk();
    Ok(MonteCarloCheck {
        exact,
        estimate,
        std_error,
        within_three_sigma: (estimate - exact).abs() <= 3.0 * std_error + SLACK_TOLERANCE,
    })
}

/// Finite-support task: points on the unit circle labelled by a tilted
/// half-plane, each label flipped with probability `label_noise`, and the
/// small model trained on each draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub draws: usize,
    pub sample_size: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub support_points: usize,
    pub label_noise: f64,
    pub expert_norm_cap: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            draws: 200,
            sample_size: 1000,
            delta: 0.05,
            epsilon: 0.25,
            support_points: 8,
            label_noise: 0.02,
            expert_norm_cap: 8.0,
            train: TrainConfig {
                epochs: 50,
                batch_size: BatchSize::Rows(32),
                runs: 1,
                experts: 4,
                hidden: 8,
                standardize: false,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// Fraction of draws on which each bound covered the exact true risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub draws: usize,
    pub catoni_covered: usize,
    pub seeger_covered: usize,
    pub rademacher_covered: usize,
    pub mean_true_risk: f64,
    pub mean_empirical_risk: f64,
    /// Mean raw bound values, Catoni then Seeger then Rademacher.
    pub mean_bounds: [f64; 3],
}

impl SimulationReport {
    pub fn rates(&self) -> [f64; 3] {
        let d = self.draws.max(1) as f64;
        [
            self.catoni_covered as f64 / d,
            self.seeger_covered as f64 / d,
            self.rademacher_covered as f64 / d,
        ]
    }
}

const SUPPORT_TILT: f64 = 0.4;

struct Support {
    points: Dataset,
    weights: Array1<f64>,
}

fn circle_support(config: &SimulationConfig) -> Result<Support, VerifyError> {
    let k = config.support_points;
    let mut x = Array2::zeros((2 * k, 2));
    let mut y = Array1::zeros(2 * k);
    let mut w = Array1::zeros(2 * k);
    for j in 0..k {
        let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
        let clean = if (angle - SUPPORT_TILT).cos() >= 0.0 { 1.0 } else { -1.0 };
        for (slot, label, p) in [(2 * j, clean, 1.0 - config.label_noise), (2 * j + 1, -clean, config.label_noise)] {
            x[[slot, 0]] = angle.cos();
            x[[slot, 1]] = angle.sin();
            y[slot] = label;
            w[slot] = p / k as f64;
        }
    }
    let points = Dataset::new(x, y, "circle-world").map_err(|e| VerifyError::Instance(e.to_string()))?;
    Ok(Support { points, weights: w })
}

/// Trains one model per draw and counts how often each certificate covers
/// the exact risk under the support distribution.
pub fn bound_validity_simulation(config: &SimulationConfig) -> Result<SimulationReport, VerifyError> {
    if config.support_points < 2 {
        return Err(VerifyError::TooFew {
            what: "support points",
            min: 2,
            found: config.support_points,
        });
    }
    let support = circle_support(config)?;
    let weights: Vec<f64> = support.weights.to_vec();
    let mut train_config = config.train.clone();
    train_config.ldp = LdpConfig::constrained(config.epsilon)?;
    train_config.max_expert_norm = Some(config.expert_norm_cap);
    let options = CertifyOptions {
        delta: config.delta,
        rademacher: RademacherInput::FixedCap {
            cap: config.expert_norm_cap,
        },
        ..CertifyOptions::default()
    };
    linear_expert_rademacher(config.expert_norm_cap, config.sample_size.max(1))?;

    let mut rng = RandomSource::new(config.seed);
    let mut report = SimulationReport {
        draws: config.draws,
        catoni_covered: 0,
        seeger_covered: 0,
        rademacher_covered: 0,
        mean_true_risk: 0.0,
        mean_empirical_risk: 0.0,
        mean_bounds: [0.0; 3],
    };
    for _ in 0..config.draws {
        let idx = (0..config.sample_size)
            .map(|_| rng.sample_categorical(&weights))
            .collect::<Result<Vec<_>, _>>()?;
        let sample = support.points.select(&idx).map_err(|e| VerifyError::Instance(e.to_string()))?;
        let seed = rand::RngCore::next_u64(&mut rng);
        let run = train_once(&train_config, &sample, &support.points, seed, &mut |_| {})?;
        let per_point = per_example_risk(&run.model, support.points.features(), support.points.labels())?;
        let true_risk = per_point.dot(&support.weights);
        let bounds = certify(&run.model, &sample, &options)?;
        report.catoni_covered += usize::from(true_risk <= bounds.catoni_ldp.raw);
        report.seeger_covered += usize::from(true_risk <= bounds.seeger_ldp.raw);
        report.rademacher_covered += usize::from(true_risk <= bounds.rademacher_ldp.raw);
        report.mean_true_risk += true_risk;
        report.mean_empirical_risk += run.train_risk.get();
        let raw = [bounds.catoni_ldp.raw, bounds.seeger_ldp.raw, bounds.rademacher_ldp.raw];
        for (acc, v) in report.mean_bounds.iter_mut().zip(raw) {
            *acc += v;
        }
    }
    if config.draws > 0 {
        let d = config.draws as f64;
        report.mean_true_risk /= d;
        report.mean_empirical_risk /= d;
        report.mean_bounds.iter_mut().for_each(|v| *v /= d);
    }
    Ok(report)
}

/// Outcome of one property across its trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Smallest margin by which the property held; negative when violated.
    pub worst_slack: f64,
    pub detail: Option<String>,
}

impl CheckOutcome {
    fn new(name: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            trials: 0,
            skipped: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            detail: None,
        }
    }

    fn record(&mut self, slack: f64, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if slack < -SLACK_TOLERANCE {
            self.violations += 1;
        }
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.detail = Some(describe());
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Random instances or tables per property; 0 runs nothing.
    pub trials: usize,
    pub epsilons: Vec<f64>,
    pub catoni_lambda: f64,
    pub softmax_beta: f64,
    pub softmax_b: f64,
    pub vacuousness_m: usize,
    pub monte_carlo_instances: usize,
    pub monte_carlo_samples: usize,
    /// Draws of the coverage simulation; 0 skips it.
    pub simulation_draws: usize,
    /// Appends a table that breaks its budget, as a negative control.
    pub inject_faulty_table: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 1000,
            epsilons: vec![0.0, 0.1, 1.0, 3.0],
            catoni_lambda: 1.0,
            softmax_beta: 0.7,
            softmax_b: 1.3,
            vacuousness_m: 10_000,
            monte_carlo_instances: 5,
            monte_carlo_samples: 100_000,
            simulation_draws: 0,
            inject_faulty_table: false,
            seed: 0,
        }
    }
}

/// Runs every check and collects worst-case slacks.
pub fn run_suite(options: &VerifyOptions) -> Result<VerifyReport, VerifyError> {
    let mut checks = Vec::new();
    let root = RandomSource::new(options.seed);

    if options.trials > 0 || options.inject_faulty_table {
        let mut rng = root.substream(0);
        let mut table_check = CheckOutcome::new("gate_table_ldp");
        for t in 0..options.trials {
            let e = options.epsilons[t % options.epsilons.len().max(1)];
            let k = 2 + rng.index_below(MAX_INSTANCES - 1);
            let n = 1 + rng.index_below(MAX_EXPERTS);
            let table = make_ldp_gate_table(k, n, GateBudget::Epsilon(e), &mut rng)?;
            let ratio = max_log_ratio(table.view());
            table_check.record(e - ratio, || format!("eps={e}: log-ratio {ratio} on a {k}x{n} table"));
        }
        if options.inject_faulty_table {
            let e = options.epsilons.first().copied().unwrap_or(1.0);
            let ratio = max_log_ratio(faulty_gate_table(e).view());
            table_check.record(e - ratio, || format!("injected table at eps={e}: log-ratio {ratio}"));
        }
        checks.push(table_check);
    }

    if options.trials > 0 {
        let kinds = [
            DeltaKind::Linear,
            DeltaKind::Catoni {
                lambda: options.catoni_lambda,
            },
            DeltaKind::Kl,
        ];
        for (k, kind) in kinds.iter().enumerate() {
            let mut rng = root.substream(1 + k as u64);
            let mut outcome = CheckOutcome::new(format!("lemma_{}", kind.name()));
            for t in 0..options.trials {
                for &e in &options.epsilons {
                    let instance = random_instance(&mut rng, e)?;
                    let r = check_lemma_delta(&instance, e, *kind)?;
                    if !r.applicable {
                        outcome.skipped += 1;
                        continue;
                    }
                    outcome.record(r.slack, || {
                        format!("trial {t}, eps={e}: lhs {} rhs {} at x'={} ({:?})", r.lhs, r.rhs, r.xprime, instance)
                    });
                }
            }
            checks.push(outcome);
        }

        let mut rng = root.substream(4);
        let (beta, b) = (options.softmax_beta, options.softmax_b);
        let mut softmax = CheckOutcome::new("softmax_ldp");
        for _ in 0..options.trials {
            let k = 2 + rng.index_below(MAX_INSTANCES - 1);
            let n = 1 + rng.index_below(MAX_EXPERTS);
            let table = Array2::from_shape_fn((k, n), |_| rng.uniform_in(-b, b));
            let biases: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let r = check_softmax_ldp(table.view(), b, beta, &biases)?;
            softmax.record(r.bound - r.max_log_ratio, || format!("log-ratio {} vs {}", r.max_log_ratio, r.bound));
        }
        let extremes = ndarray::array![[b, -b], [-b, b]];
        let tight = check_softmax_ldp(extremes.view(), b, beta, &[0.0, 0.0])?;
        let mut witness = CheckOutcome::new("softmax_ldp_tightness");
        witness.record(tight.max_log_ratio - 2.0 * beta * b, || {
            format!("extreme two-point table reaches {} of {}", tight.max_log_ratio, tight.bound)
        });
        checks.push(softmax);
        checks.push(witness);

        let mut rng = root.substream(5);
        for e in [0.0, 1.0] {
            let demo = nonadaptive_vacuousness_demo(e, options.vacuousness_m, &mut rng)?;
            let mut lower = CheckOutcome::new(format!("vacuousness_lower_eps{e}"));
            let target = 0.45 * (-e).exp();
            lower.record(demo.empirical_risk_lower - target, || format!("{demo:?} vs {target}"));
            checks.push(lower);
            let mut bound = CheckOutcome::new(format!("vacuousness_bound_eps{e}"));
            let target = e.exp() / 2.0 - 0.05;
            bound.record(demo.bound_value - target, || format!("{demo:?} vs {target}"));
            checks.push(bound);
        }

        let mut rng = root.substream(6);
        let mut mc = CheckOutcome::new("monte_carlo_consistency");
        for _ in 0..options.monte_carlo_instances {
            let e = options.epsilons[rng.index_below(options.epsilons.len().max(1))];
            let instance = random_instance(&mut rng, e)?;
            let r = monte_carlo_risk(&instance, options.monte_carlo_samples, &mut rng)?;
            mc.record(3.0 * r.std_error - (r.estimate - r.exact).abs(), || format!("{r:?}"));
        }
        checks.push(mc);
    }

    if options.simulation_draws > 0 {
        let sim = bound_validity_simulation(&SimulationConfig {
            draws: options.simulation_draws,
            seed: options.seed,
            ..SimulationConfig::default()
        })?;
        for (name, rate) in ["coverage_catoni", "coverage_seeger", "coverage_rademacher"]
            .iter()
            .zip(sim.rates())
        {
            let mut c = CheckOutcome::new(*name);
            c.record(rate - 0.95, || format!("{rate} of {} draws covered", sim.draws));
            checks.push(c);
        }
    }

    Ok(VerifyReport { checks })
}
