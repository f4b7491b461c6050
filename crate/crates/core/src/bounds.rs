//! Risk certificates for mixtures whose gate satisfies eps-LDP.
//!
//! Every bound here is a function of the empirical risk, the per-expert
//! complexity terms and the gate evaluated at one reference input `x'`. The
//! PAC-Bayes forms use unit-variance Gaussian posteriors centered at each
//! expert's weights and a standard Gaussian prior. Under that choice the
//! posterior's expected 0-1 loss on `(x, y)` is exactly the probit loss the
//! model trains on, and `KL(Q_i || P_i) = |w_i|^2 / 2`.

use crate::data::Dataset;
use crate::model::{empirical_risk, expert_forward_batch, gate_batch, LdpConfig, MoEModel, ModelError};
use crate::numerics::{kl_inverse_upper, NumericsError, Probability};
use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("lambda must exceed 1/2, got {0}")]
    Lambda(f64),
    #[error("epsilon must be finite and nonnegative, got {0}")]
    Epsilon(f64),
    #[error("{bound} needs at least {min} samples, got {m}")]
    SampleSize { bound: &'static str, m: usize, min: usize },
    #[error("{what} has length {found}, expected {expected}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("{what} must be finite and nonnegative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("gate at x' sums to {0}")]
    Gate(f64),
    #[error("expert index {index} out of range for {n} experts")]
    ExpertIndex { index: usize, n: usize },
    #[error("weight norm cap must be positive and finite, got {0}")]
    Cap(f64),
    #[error("no evaluation points")]
    NoEvalPoints,
    #[error("empty epsilon grid")]
    EmptyGrid,
    #[error("grid member {index} was computed at delta {found}, expected {expected}")]
    GridDelta { index: usize, expected: f64, found: f64 },
    #[error("the model's gate is unconstrained, so no LDP bound applies")]
    Unconstrained,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Everything a bound formula reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub empirical_risk: Probability,
    pub per_expert_kl: Vec<f64>,
    pub per_expert_rademacher: Vec<f64>,
    pub gate_at_xprime: Vec<f64>,
}

const GATE_SUM_TOLERANCE: f64 = 1e-9;

fn nonnegative(what: &'static str, values: &[f64]) -> Result<(), BoundError> {
    match values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        Some(&value) => Err(BoundError::Negative { what, value }),
        None => Ok(()),
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), BoundError> {
    if expected == found {
        Ok(())
    } else {
        Err(BoundError::Length { what, expected, found })
    }
}

impl BoundInputs {
    /// Inputs with a uniform gate, zero complexities and `lambda = 1`.
    pub fn uniform(m: usize, n: usize, delta: f64, epsilon: f64, empirical_risk: Probability) -> Self {
        BoundInputs {
            m,
            n,
            delta,
            epsilon,
            lambda: 1.0,
            empirical_risk,
            per_expert_kl: vec![0.0; n],
            per_expert_rademacher: vec![0.0; n],
            gate_at_xprime: vec![1.0 / n as f64; n],
        }
    }

    pub fn validate(&self) -> Result<(), BoundError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundError::Delta(self.delta));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(BoundError::Epsilon(self.epsilon));
        }
        if self.m == 0 {
            return Err(BoundError::SampleSize { bound: "any bound", m: 0, min: 1 });
        }
        if self.n == 0 {
            return Err(BoundError::Length { what: "expert count", expected: 1, found: 0 });
        }
        check_len("per_expert_kl", self.n, self.per_expert_kl.len())?;
        check_len("per_expert_rademacher", self.n, self.per_expert_rademacher.len())?;
        check_len("gate_at_xprime", self.n, self.gate_at_xprime.len())?;
        nonnegative("per_expert_kl", &self.per_expert_kl)?;
        nonnegative("per_expert_rademacher", &self.per_expert_rademacher)?;
        nonnegative("gate_at_xprime", &self.gate_at_xprime)?;
        let total: f64 = self.gate_at_xprime.iter().sum();
        if (total - 1.0).abs() > GATE_SUM_TOLERANCE {
            return Err(BoundError::Gate(total));
        }
        Ok(())
    }

    /// `sum_i g_i(x') KL_i`.
    pub fn weighted_kl(&self) -> f64 {
        weighted(&self.gate_at_xprime, &self.per_expert_kl)
    }

    /// `sum_i g_i(x') Rad_i`.
    pub fn weighted_rademacher(&self) -> f64 {
        weighted(&self.gate_at_xprime, &self.per_expert_rademacher)
    }

    fn check_lambda(&self) -> Result<(), BoundError> {
        if self.lambda.is_finite() && self.lambda > 0.5 {
            Ok(())
        } else {
            Err(BoundError::Lambda(self.lambda))
        }
    }
}

fn weighted(gate: &[f64], penalty: &[f64]) -> f64 {
    gate.iter().zip(penalty).map(|(g, p)| g * p).sum()
}

/// `KL(N(w, I) || N(0, I)) = |w|^2 / 2`.
pub fn gaussian_kl(w: &[f64]) -> f64 {
    0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

fn catoni_form(lambda: f64, risk_term: f64, m: usize, complexity: f64, log_term: f64) -> f64 {
    (2.0 * lambda / (2.0 * lambda - 1.0)) * (risk_term + (lambda / m as f64) * (complexity + log_term))
}

/// Single-expert Catoni bound on `R(Q_i)` at confidence `delta`.
pub fn catoni_base(inputs: &BoundInputs, i: usize) -> Result<f64, BoundError> {
    inputs.validate()?;
    inputs.check_lambda()?;
    let kl = *inputs
        .per_expert_kl
        .get(i)
        .ok_or(BoundError::ExpertIndex { index: i, n: inputs.n })?;
    Ok(catoni_form(
        inputs.lambda,
        inputs.empirical_risk.get(),
        inputs.m,
        kl,
        (1.0 / inputs.delta).ln(),
    ))
}

pub fn catoni_ldp_bound(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    inputs.check_lambda()?;
    let e = inputs.epsilon.exp();
    let log_term = (inputs.n as f64 / inputs.delta).ln();
    Ok(e * catoni_form(
        inputs.lambda,
        e * inputs.empirical_risk.get(),
        inputs.m,
        inputs.weighted_kl(),
        log_term,
    ))
}

pub const SEEGER_MIN_SAMPLES: usize = 8;

fn seeger_budget(complexity: f64, n: usize, m: usize, delta: f64) -> f64 {
    let mf = m as f64;
    (complexity + (2.0 * n as f64 * mf.sqrt() / delta).ln()) / mf
}

fn check_seeger_m(m: usize) -> Result<(), BoundError> {
    if m < SEEGER_MIN_SAMPLES {
        Err(BoundError::SampleSize { bound: "seeger", m, min: SEEGER_MIN_SAMPLES })
    } else {
        Ok(())
    }
}

/// Single-expert kl-inversion bound on `R(Q_i)`.
pub fn seeger_base(inputs: &BoundInputs, i: usize) -> Result<f64, BoundError> {
    inputs.validate()?;
    check_seeger_m(inputs.m)?;
    let kl = *inputs
        .per_expert_kl
        .get(i)
        .ok_or(BoundError::ExpertIndex { index: i, n: inputs.n })?;
    let budget = seeger_budget(kl, 1, inputs.m, inputs.delta);
    Ok(kl_inverse_upper(inputs.empirical_risk, budget)?.get())
}

/// `min(1, e^eps kl_inv(e^eps R_S, B))`, or 1 when `e^eps R_S > 1`.
///
/// `kl_inv(q, B) >= q`, so the value also covers the `R < e^{2 eps} R_S`
/// branch.
pub fn seeger_ldp_bound(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    check_seeger_m(inputs.m)?;
    let e = inputs.epsilon.exp();
    let scaled = e * inputs.empirical_risk.get();
    if scaled > 1.0 {
        return Ok(1.0);
    }
    let budget = seeger_budget(inputs.weighted_kl(), inputs.n, inputs.m, inputs.delta);
    let inverse = kl_inverse_upper(Probability::new(scaled)?, budget)?.get();
    Ok((e * inverse).min(1.0))
}

/// Single-class Rademacher bound `R_S + 2 Rad_i + sqrt(2 ln(2/delta) / m)`.
pub fn rademacher_base(inputs: &BoundInputs, i: usize) -> Result<f64, BoundError> {
    inputs.validate()?;
    let rad = *inputs
        .per_expert_rademacher
        .get(i)
        .ok_or(BoundError::ExpertIndex { index: i, n: inputs.n })?;
    let tail = (2.0 * (2.0 / inputs.delta).ln() / inputs.m as f64).sqrt();
    Ok(inputs.empirical_risk.get() + 2.0 * rad + tail)
}

pub fn rademacher_ldp_bound(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    let e = inputs.epsilon.exp();
    let tail = (2.0 * (2.0 * inputs.n as f64 / inputs.delta).ln() / inputs.m as f64).sqrt();
    Ok(e * (e * inputs.empirical_risk.get() + 2.0 * inputs.weighted_rademacher() + tail))
}

/// Rademacher complexity of the probit loss over `{x -> <w, x/|x|> : |w| <= cap}`.
pub fn linear_expert_rademacher(weight_norm_cap: f64, m: usize) -> Result<f64, BoundError> {
    if !(weight_norm_cap.is_finite() && weight_norm_cap > 0.0) {
        return Err(BoundError::Cap(weight_norm_cap));
    }
    if m == 0 {
        return Err(BoundError::SampleSize { bound: "rademacher", m, min: 1 });
    }
    Ok(weight_norm_cap / (2.0 * PI * m as f64).sqrt())
}

/// Catoni form with the summed complexity `gating_kl + sum_i KL_i` and
/// `ln(1/delta)`, for comparison against [`catoni_ldp_bound`].
pub fn naive_pacbayes_comparison(inputs: &BoundInputs, gating_kl: f64) -> Result<f64, BoundError> {
    inputs.validate()?;
    inputs.check_lambda()?;
    if !(gating_kl.is_finite() && gating_kl >= 0.0) {
        return Err(BoundError::Negative { what: "gating_kl", value: gating_kl });
    }
    let total = gating_kl + inputs.per_expert_kl.iter().sum::<f64>();
    Ok(catoni_form(
        inputs.lambda,
        inputs.empirical_risk.get(),
        inputs.m,
        total,
        (1.0 / inputs.delta).ln(),
    ))
}

/// Reference input minimizing the gate-weighted penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XPrime {
    pub index: usize,
    pub weighted_penalty: f64,
    pub gate: Vec<f64>,
}

const GATE_CHUNK: usize = 2048;

/// Argmin over rows of `eval_points` of `sum_i g_i(x') penalty_i`; ties go to
/// the lowest index.
pub fn select_xprime(
    model: &MoEModel,
    eval_points: ArrayView2<'_, f64>,
    penalty: &[f64],
) -> Result<XPrime, BoundError> {
    if eval_points.nrows() == 0 {
        return Err(BoundError::NoEvalPoints);
    }
    check_len("penalty", model.n(), penalty.len())?;
    nonnegative("penalty", penalty)?;
    let mut best: Option<XPrime> = None;
    let mut start = 0;
    while start < eval_points.nrows() {
        let end = (start + GATE_CHUNK).min(eval_points.nrows());
        let gates = gate_batch(model, eval_points.slice(s![start..end, ..]))?;
        for (offset, row) in gates.outer_iter().enumerate() {
            let value: f64 = row.iter().zip(penalty).map(|(g, p)| g * p).sum();
            if best.as_ref().is_none_or(|b| value < b.weighted_penalty) {
                best = Some(XPrime {
                    index: start + offset,
                    weighted_penalty: value,
                    gate: row.to_vec(),
                });
            }
        }
        start = end;
    }
    Ok(best.expect("at least one evaluation point"))
}

/// One bound with its raw value kept alongside the value reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub raw: f64,
    pub headline: f64,
    pub vacuous: bool,
}

impl BoundValue {
    pub fn new(raw: f64) -> Self {
        BoundValue {
            raw,
            headline: raw.min(1.0),
            vacuous: raw >= 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    CatoniLdp,
    SeegerLdp,
    RademacherLdp,
}

/// Where the per-expert Rademacher terms came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RademacherSource {
    /// Cap set to the largest trained expert norm, which depends on the sample.
    PostHocCap { cap: f64 },
    FixedCap { cap: f64 },
    Supplied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatoniTerm {
    pub lambda: f64,
    pub value: f64,
}

/// Single-expert certificates for `R(Q_i)` (PAC-Bayes) and `R(h_i)`
/// (Rademacher), each at the report's `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertBase {
    pub empirical_risk: Probability,
    pub catoni: f64,
    pub seeger: Option<f64>,
    pub rademacher: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub catoni_ldp: BoundValue,
    pub catoni_lambda: f64,
    pub catoni_grid: Vec<CatoniTerm>,
    pub seeger_ldp: BoundValue,
    pub rademacher_ldp: BoundValue,
    pub naive_comparison: BoundValue,
    pub gating_kl: f64,
    /// x' used by the KL-weighted bounds.
    pub chosen_xprime_index: usize,
    /// x' used by the Rademacher bound.
    pub rademacher_xprime_index: usize,
    pub rademacher_source: RademacherSource,
    pub expert_base: Vec<ExpertBase>,
    /// Inputs at the KL-optimal x'; `delta` is the confidence of each bound.
    pub inputs: BoundInputs,
    pub caveats: Vec<String>,
}

impl BoundReport {
    pub fn value(&self, kind: BoundKind) -> BoundValue {
        match kind {
            BoundKind::CatoniLdp => self.catoni_ldp,
            BoundKind::SeegerLdp => self.seeger_ldp,
            BoundKind::RademacherLdp => self.rademacher_ldp,
        }
    }
}

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.6, 0.8, 1.0, 2.0, 5.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RademacherInput {
    PostHoc,
    FixedCap { cap: f64 },
    Supplied { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    pub rademacher: RademacherInput,
    pub gating_kl: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            delta: 0.05,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            rademacher: RademacherInput::PostHoc,
            gating_kl: 0.0,
        }
    }
}

/// Evaluates every bound for `model` on its training sample, with `x'`
/// ranging over the training inputs.
///
/// Each Catoni grid entry is evaluated at `delta / k` for a grid of size `k`;
/// the Seeger and Rademacher bounds each hold at `delta`.
pub fn certify(model: &MoEModel, train: &Dataset, options: &CertifyOptions) -> Result<BoundReport, BoundError> {
    let epsilon = match model.ldp {
        LdpConfig::Unconstrained => return Err(BoundError::Unconstrained),
        LdpConfig::Constrained { epsilon } => epsilon,
    };
    if options.lambda_grid.is_empty() {
        return Err(BoundError::Lambda(f64::NAN));
    }
    let n = model.n();
    let m = train.len();
    let risk = empirical_risk(model, train)?;
    let kl: Vec<f64> = model
        .experts
        .weights
        .outer_iter()
        .map(|w| gaussian_kl(w.as_slice().expect("row-major experts")))
        .collect();
    let mut caveats = Vec::new();
    let (rad, rademacher_source) = match &options.rademacher {
        RademacherInput::PostHoc => {
            let cap = model
                .experts
                .weights
                .outer_iter()
                .map(|w| w.dot(&w).sqrt())
                .fold(0.0, f64::max);
            caveats.push(format!(
                "rademacher terms use the post-hoc cap {cap} (largest trained expert norm), which was chosen after seeing the sample"
            ));
            let value = if cap == 0.0 { 0.0 } else { linear_expert_rademacher(cap, m)? };
            (vec![value; n], RademacherSource::PostHocCap { cap })
        }
        RademacherInput::FixedCap { cap } => {
            let value = linear_expert_rademacher(*cap, m)?;
            let over = model
                .experts
                .weights
                .outer_iter()
                .filter(|w| w.dot(w).sqrt() > *cap)
                .count();
            if over > 0 {
                caveats.push(format!("{over} experts exceed the fixed norm cap {cap}"));
            }
            (vec![value; n], RademacherSource::FixedCap { cap: *cap })
        }
        RademacherInput::Supplied { values } => (values.clone(), RademacherSource::Supplied),
    };
    let points = train.features();
    let kl_choice = select_xprime(model, points, &kl)?;
    let rad_choice = select_xprime(model, points, &rad)?;

    let mut inputs = BoundInputs {
        m,
        n,
        delta: options.delta,
        epsilon,
        lambda: options.lambda_grid[0],
        empirical_risk: risk,
        per_expert_kl: kl,
        per_expert_rademacher: rad,
        gate_at_xprime: kl_choice.gate.clone(),
    };
    inputs.validate()?;

    let k = options.lambda_grid.len() as f64;
    let mut grid_inputs = inputs.clone();
    grid_inputs.delta = options.delta / k;
    let mut catoni_grid = Vec::with_capacity(options.lambda_grid.len());
    let mut naive_best = f64::INFINITY;
    for &lambda in &options.lambda_grid {
        grid_inputs.lambda = lambda;
        catoni_grid.push(CatoniTerm { lambda, value: catoni_ldp_bound(&grid_inputs)? });
        naive_best = naive_best.min(naive_pacbayes_comparison(&grid_inputs, options.gating_kl)?);
    }
    let best = catoni_grid
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("nonempty grid");
    let (catoni_value, catoni_lambda) = (best.value, best.lambda);
    inputs.lambda = catoni_lambda;

    let seeger = if m >= SEEGER_MIN_SAMPLES {
        seeger_ldp_bound(&inputs)?
    } else {
        caveats.push(format!("seeger bound needs {SEEGER_MIN_SAMPLES} samples, got {m}; reported as 1"));
        1.0
    };

    let mut rad_inputs = inputs.clone();
    rad_inputs.gate_at_xprime = rad_choice.gate;
    let rademacher = rademacher_ldp_bound(&rad_inputs)?;

    let expert_risks = per_expert_empirical_risk(model, train);
    let mut expert_base = Vec::with_capacity(n);
    for (i, &r) in expert_risks.iter().enumerate() {
        let mut single = inputs.clone();
        single.empirical_risk = Probability::saturating(r);
        single.lambda = 1.0;
        expert_base.push(ExpertBase {
            empirical_risk: single.empirical_risk,
            catoni: catoni_base(&single, i)?,
            seeger: if m >= SEEGER_MIN_SAMPLES { Some(seeger_base(&single, i)?) } else { None },
            rademacher: rademacher_base(&single, i)?,
        });
    }

    Ok(BoundReport {
        catoni_ldp: BoundValue::new(catoni_value),
        catoni_lambda,
        catoni_grid,
        seeger_ldp: BoundValue::new(seeger),
        rademacher_ldp: BoundValue::new(rademacher),
        naive_comparison: BoundValue::new(naive_best),
        gating_kl: options.gating_kl,
        chosen_xprime_index: kl_choice.index,
        rademacher_xprime_index: rad_choice.index,
        rademacher_source,
        expert_base,
        inputs,
        caveats,
    })
}

/// Mean probit loss of each expert on its own over `data`.
pub fn per_expert_empirical_risk(model: &MoEModel, data: &Dataset) -> Vec<f64> {
    let (x, y) = (data.features(), data.labels());
    let mut totals = vec![0.0; model.n()];
    let mut start = 0;
    while start < data.len() {
        let end = (start + GATE_CHUNK).min(data.len());
        let fwd = expert_forward_batch(&model.experts, x.slice(s![start..end, ..]), y.slice(s![start..end]));
        for row in fwd.losses.outer_iter() {
            for (t, l) in totals.iter_mut().zip(row) {
                *t += l;
            }
        }
        start = end;
    }
    totals.iter().map(|t| t / data.len().max(1) as f64).collect()
}

const GRID_DELTA_TOLERANCE: f64 = 1e-12;

/// Picks the grid member with the smallest `kind` bound after checking that
/// each member was computed at `delta / k`.
pub fn epsilon_grid_bound(reports: &[BoundReport], delta: f64, kind: BoundKind) -> Result<BoundReport, BoundError> {
    if reports.is_empty() {
        return Err(BoundError::EmptyGrid);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BoundError::Delta(delta));
    }
    let expected = delta / reports.len() as f64;
    for (index, r) in reports.iter().enumerate() {
        let found = r.inputs.delta;
        if (found - expected).abs() > GRID_DELTA_TOLERANCE * expected {
            return Err(BoundError::GridDelta { index, expected, found });
        }
    }
    let best = reports
        .iter()
        .min_by(|a, b| a.value(kind).raw.total_cmp(&b.value(kind).raw))
        .expect("nonempty grid");
    Ok(best.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn fixed_cap_value() {
        assert!((linear_expert_rademacher(1.0, 1000).unwrap() - 0.012615662610100801).abs() < 1e-15);
        assert!(linear_expert_rademacher(0.0, 10).is_err());
        assert!(linear_expert_rademacher(1.0, 0).is_err());
    }

    #[test]
    fn validation_rejects_malformed_inputs() {
        let good = BoundInputs::uniform(100, 3, 0.05, 1.0, p(0.1));
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.delta = 1.0;
        assert!(matches!(bad.validate(), Err(BoundError::Delta(_))));
        let mut bad = good.clone();
        bad.gate_at_xprime = vec![0.5, 0.5, 0.5];
        assert!(matches!(bad.validate(), Err(BoundError::Gate(_))));
        let mut bad = good.clone();
        bad.per_expert_kl = vec![0.0; 2];
        assert!(matches!(bad.validate(), Err(BoundError::Length { .. })));
        let mut bad = good.clone();
        bad.per_expert_rademacher[1] = -1.0;
        assert!(matches!(bad.validate(), Err(BoundError::Negative { .. })));
        let mut bad = good;
        bad.lambda = 0.5;
        assert!(matches!(catoni_ldp_bound(&bad), Err(BoundError::Lambda(_))));
    }

    #[test]
    fn headline_clamps_but_keeps_raw() {
        let v = BoundValue::new(1.7);
        assert_eq!((v.raw, v.headline, v.vacuous), (1.7, 1.0, true));
        let v = BoundValue::new(0.2);
        assert_eq!((v.raw, v.headline, v.vacuous), (0.2, 0.2, false));
    }
}
