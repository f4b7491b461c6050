//! Mixture of linear experts with a two-hidden-layer gating network.
//!
//! The gate computes `f0(x) = tanh(W2 relu(W1 x + b1) + b2)`, projects the
//! output-layer logits `W3 f0(x)` into the box `[-eps/4, eps/4]` when an
//! LDP budget is configured, and applies a softmax with the bias `b3`.
//! Expert `i` scores `x` with `<w_i, x>` and is charged the probit loss
//! `Phi(y <w_i, x> / |x|)`.

mod io;

pub use io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use crate::data::Dataset;
use crate::numerics::{
    normal_upper_tail, softmax_in_place, NumericsError, Probability, RandomSource,
};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("expert index {index} out of range for {n} experts")]
    ExpertIndex { index: usize, n: usize },
    #[error("label {0} is not +1 or -1")]
    Label(f64),
    #[error("epsilon must be a finite nonnegative number, got {0}")]
    Epsilon(f64),
    #[error("cannot parse LDP setting `{0}`")]
    ParseLdp(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    EmptyData,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
}

fn dim_err(what: &'static str, expected: impl fmt::Debug, found: impl fmt::Debug) -> ModelError {
    ModelError::Dimension {
        what,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}

/// Whether the gate's logits are squeezed into `[-eps/4, eps/4]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LdpConfig {
    Unconstrained,
    Constrained { epsilon: f64 },
}

impl LdpConfig {
    pub fn constrained(epsilon: f64) -> Result<Self, ModelError> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(LdpConfig::Constrained { epsilon })
        } else {
            Err(ModelError::Epsilon(epsilon))
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            LdpConfig::Unconstrained => None,
            LdpConfig::Constrained { epsilon } => Some(epsilon),
        }
    }

    /// Short label used in file names and report columns.
    pub fn tag(&self) -> String {
        match self {
            LdpConfig::Unconstrained => "none".to_owned(),
            LdpConfig::Constrained { epsilon } => format!("eps={epsilon}"),
        }
    }
}

impl fmt::Display for LdpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for LdpConfig {
    type Err = ModelError;

    /// Accepts `none`/`unconstrained`, a bare number, or `eps=<number>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if matches!(t.to_ascii_lowercase().as_str(), "none" | "unconstrained" | "inf") {
            return Ok(LdpConfig::Unconstrained);
        }
        let num = t.strip_prefix("eps=").unwrap_or(t);
        let eps: f64 = num.parse().map_err(|_| ModelError::ParseLdp(s.to_owned()))?;
        LdpConfig::constrained(eps)
    }
}

/// Weight vectors of the linear experts, one row per expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertBank {
    pub weights: Array2<f64>,
}

impl ExpertBank {
    pub fn new(weights: Array2<f64>) -> Result<Self, ModelError> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(dim_err("expert bank", "n >= 1, d >= 1", weights.dim()));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("expert weights"));
        }
        Ok(ExpertBank { weights })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        ExpertBank {
            weights: Array2::zeros((n, d)),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }
}

/// Parameters of the gating network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl GatingParams {
    pub fn zeros(d: usize, n: usize, hidden: usize) -> Self {
        GatingParams {
            w1: Array2::zeros((hidden, d)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array1::zeros(hidden),
            w3: Array2::zeros((n, hidden)),
            b3: Array1::zeros(n),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w3.nrows()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (h, d, n) = (self.hidden(), self.input_dim(), self.outputs());
        if h == 0 || d == 0 || n == 0 {
            return Err(dim_err("gating sizes", "all >= 1", (h, d, n)));
        }
        if self.b1.len() != h {
            return Err(dim_err("b1", h, self.b1.len()));
        }
        if self.w2.dim() != (h, h) {
            return Err(dim_err("W2", (h, h), self.w2.dim()));
        }
        if self.b2.len() != h {
            return Err(dim_err("b2", h, self.b2.len()));
        }
        if self.w3.ncols() != h {
            return Err(dim_err("W3 columns", h, self.w3.ncols()));
        }
        if self.b3.len() != n {
            return Err(dim_err("b3", n, self.b3.len()));
        }
        let finite = [&self.w1, &self.w2, &self.w3]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b1, &self.b2, &self.b3]
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(ModelError::NonFinite("gating parameters"));
        }
        Ok(())
    }

    /// Frobenius norm of the output layer.
    pub fn w3_frobenius(&self) -> f64 {
        self.w3.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoEModel {
    pub experts: ExpertBank,
    pub gating: GatingParams,
    pub ldp: LdpConfig,
}

impl MoEModel {
    /// Stores every tensor in row-major layout.
    pub fn new(experts: ExpertBank, gating: GatingParams, ldp: LdpConfig) -> Result<Self, ModelError> {
        fn rows<D: ndarray::Dimension>(a: ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
            if a.is_standard_layout() {
                a
            } else {
                a.as_standard_layout().into_owned()
            }
        }
        let experts = ExpertBank {
            weights: rows(experts.weights),
        };
        let gating = GatingParams {
            w1: rows(gating.w1),
            b1: rows(gating.b1),
            w2: rows(gating.w2),
            b2: rows(gating.b2),
            w3: rows(gating.w3),
            b3: rows(gating.b3),
        };
        let model = MoEModel {
            experts,
            gating,
            ldp,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn zeros(d: usize, n: usize, hidden: usize, ldp: LdpConfig) -> Self {
        MoEModel {
            experts: ExpertBank::zeros(n, d),
            gating: GatingParams::zeros(d, n, hidden),
            ldp,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.gating.validate()?;
        if self.experts.n() != self.gating.outputs() {
            return Err(dim_err("expert count", self.gating.outputs(), self.experts.n()));
        }
        if self.experts.d() != self.gating.input_dim() {
            return Err(dim_err("input dimension", self.gating.input_dim(), self.experts.d()));
        }
        if self.experts.weights.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("expert weights"));
        }
        if let LdpConfig::Constrained { epsilon } = self.ldp {
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return Err(ModelError::Epsilon(epsilon));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.experts.n()
    }

    pub fn d(&self) -> usize {
        self.experts.d()
    }

    pub fn hidden(&self) -> usize {
        self.gating.hidden()
    }

    pub fn parameter_count(&self) -> usize {
        let g = &self.gating;
        self.experts.weights.len()
            + g.w1.len()
            + g.b1.len()
            + g.w2.len()
            + g.b2.len()
            + g.w3.len()
            + g.b3.len()
    }

    /// Euclidean norm of every parameter tensor, in storage order.
    pub fn parameter_norms(&self) -> Vec<(&'static str, f64)> {
        fn l2<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
            values.map(|v| v * v).sum::<f64>().sqrt()
        }
        let g = &self.gating;
        vec![
            ("experts", l2(self.experts.weights.iter())),
            ("w1", l2(g.w1.iter())),
            ("b1", l2(g.b1.iter())),
            ("w2", l2(g.w2.iter())),
            ("b2", l2(g.b2.iter())),
            ("w3", l2(g.w3.iter())),
            ("b3", l2(g.b3.iter())),
        ]
    }
}

fn check_input(gating: &GatingParams, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != gating.input_dim() {
        return Err(dim_err("input length", gating.input_dim(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("input"));
    }
    Ok(())
}

/// `f0(x) = tanh(W2 relu(W1 x + b1) + b2)`.
pub fn gating_hidden(gating: &GatingParams, x: &[f64]) -> Result<Array1<f64>, ModelError> {
    check_input(gating, x)?;
    let x = ArrayView1::from(x);
    let h1 = (gating.w1.dot(&x) + &gating.b1).mapv(|a| a.max(0.0));
    Ok((gating.w2.dot(&h1) + &gating.b2).mapv(f64::tanh))
}

/// Multiplier applied to `W3 f0` by the projection: `eps / (4 |f0| |W3|_F)`
/// when constrained (0 if either norm vanishes), 1 otherwise.
fn projection_scale(ldp: LdpConfig, f0_norm: f64, w3_frobenius: f64) -> f64 {
    match ldp {
        LdpConfig::Unconstrained => 1.0,
        LdpConfig::Constrained { epsilon } => {
            if f0_norm == 0.0 || w3_frobenius == 0.0 {
                0.0
            } else {
                epsilon / (4.0 * f0_norm * w3_frobenius)
            }
        }
    }
}

/// Output-layer logits, projected into `[-eps/4, eps/4]` when constrained.
pub fn ldp_project(gating: &GatingParams, ldp: LdpConfig, f0: ArrayView1<'_, f64>) -> Array1<f64> {
    let norm = f0.dot(&f0).sqrt();
    let scale = projection_scale(ldp, norm, gating.w3_frobenius());
    let raw = gating.w3.dot(&f0);
    if scale == 0.0 {
        Array1::zeros(raw.len())
    } else {
        raw * scale
    }
}

/// Gate probabilities `g(x)`.
pub fn gate(model: &MoEModel, x: &[f64]) -> Result<Array1<f64>, ModelError> {
    let f0 = gating_hidden(&model.gating, x)?;
    let logits = ldp_project(&model.gating, model.ldp, f0.view());
    let mut scores = logits + &model.gating.b3;
    softmax_in_place(scores.as_slice_mut().expect("contiguous"));
    Ok(scores)
}

fn check_label(y: f64) -> Result<(), ModelError> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(ModelError::Label(y))
    }
}

fn normalized_margin(dot: f64, y: f64, x_norm: f64) -> f64 {
    if x_norm == 0.0 {
        0.0
    } else {
        y * dot / x_norm
    }
}

/// Probit loss of expert `i` on `(x, y)`; a zero input has margin 0.
pub fn expert_margin_loss(
    experts: &ExpertBank,
    i: usize,
    x: &[f64],
    y: f64,
) -> Result<Probability, ModelError> {
    if i >= experts.n() {
        return Err(ModelError::ExpertIndex { index: i, n: experts.n() });
    }
    if x.len() != experts.d() {
        return Err(dim_err("input length", experts.d(), x.len()));
    }
    check_label(y)?;
    let x = ArrayView1::from(x);
    let dot = experts.weights.row(i).dot(&x);
    let z = normalized_margin(dot, y, x.dot(&x).sqrt());
    Ok(crate::numerics::probit(z)?)
}

/// Intermediate values of the gating network on a batch of rows.
pub(crate) struct GateForward {
    pub pre1: Array2<f64>,
    pub hidden1: Array2<f64>,
    pub f0: Array2<f64>,
    pub f0_norm: Array1<f64>,
    pub raw_logits: Array2<f64>,
    pub scale: Array1<f64>,
    pub gate: Array2<f64>,
}

pub(crate) fn gate_forward_batch(model: &MoEModel, x: ArrayView2<'_, f64>) -> GateForward {
    let g = &model.gating;
    let mut pre1 = x.dot(&g.w1.t());
    pre1 += &g.b1;
    let hidden1 = pre1.mapv(|a| a.max(0.0));
    let mut f0 = hidden1.dot(&g.w2.t());
    f0 += &g.b2;
    f0.mapv_inplace(f64::tanh);
    let f0_norm = f0.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let raw_logits = f0.dot(&g.w3.t());
    // products may come back column-major for degenerate shapes
    let frob = g.w3_frobenius();
    let scale = f0_norm.mapv(|r| projection_scale(model.ldp, r, frob));
    let mut gate = raw_logits.as_standard_layout().into_owned();
    Zip::from(gate.rows_mut()).and(&scale).for_each(|mut row, &c| {
        if c == 0.0 {
            row.fill(0.0);
        } else {
            row *= c;
        }
        row += &g.b3;
        softmax_in_place(row.as_slice_mut().expect("row-major gate"));
    });
    GateForward {
        pre1,
        hidden1,
        f0,
        f0_norm,
        raw_logits,
        scale,
        gate,
    }
}

/// Per-expert margins and losses on a labelled batch.
pub(crate) struct ExpertForward {
    pub x_norm: Array1<f64>,
    pub margins: Array2<f64>,
    pub losses: Array2<f64>,
}

pub(crate) fn expert_forward_batch(
    experts: &ExpertBank,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> ExpertForward {
    let x_norm = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut margins = x.dot(&experts.weights.t());
    Zip::from(margins.rows_mut())
        .and(&y)
        .and(&x_norm)
        .for_each(|mut row, &yj, &nj| row.mapv_inplace(|dot| normalized_margin(dot, yj, nj)));
    let losses = margins.mapv(normal_upper_tail);
    ExpertForward {
        x_norm,
        margins,
        losses,
    }
}

fn check_batch(model: &MoEModel, x: ArrayView2<'_, f64>) -> Result<(), ModelError> {
    model.validate()?;
    if x.ncols() != model.d() {
        return Err(dim_err("input dimension", model.d(), x.ncols()));
    }
    Ok(())
}

/// Gate probabilities for every row of `x` (rows of the result).
pub fn gate_batch(model: &MoEModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
    check_batch(model, x)?;
    Ok(gate_forward_batch(model, x).gate)
}

/// Per-example loss `sum_i g_i(x) Phi(y <w_i, x> / |x|)` for each row.
pub fn per_example_risk(
    model: &MoEModel,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Array1<f64>, ModelError> {
    check_batch(model, x)?;
    if y.len() != x.nrows() {
        return Err(dim_err("label count", x.nrows(), y.len()));
    }
    let gate = gate_forward_batch(model, x).gate;
    let experts = expert_forward_batch(&model.experts, x, y);
    Ok((&gate * &experts.losses).sum_axis(Axis(1)))
}

const RISK_CHUNK: usize = 2048;

/// Exact gate-weighted probit risk averaged over the dataset.
pub fn empirical_risk(model: &MoEModel, data: &Dataset) -> Result<Probability, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let (x, y) = (data.features(), data.labels());
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + RISK_CHUNK).min(data.len());
        let losses = per_example_risk(model, x.slice(s![start..end, ..]), y.slice(s![start..end]))?;
        total += losses.iter().sum::<f64>();
        start = end;
    }
    Ok(Probability::saturating(total / data.len() as f64))
}

/// Samples an expert index from `g(x)`.
pub fn route(model: &MoEModel, x: &[f64], rng: &mut RandomSource) -> Result<usize, ModelError> {
    let g = gate(model, x)?;
    Ok(rng.sample_categorical(g.as_slice().expect("contiguous"))?)
}

/// One-out-of-n prediction: draw `i ~ g(x)` and return `<w_i, x>`.
pub fn predict_stochastic(
    model: &MoEModel,
    x: &[f64],
    rng: &mut RandomSource,
) -> Result<f64, ModelError> {
    let i = route(model, x, rng)?;
    Ok(model.experts.weights.row(i).dot(&ArrayView1::from(x)))
}
