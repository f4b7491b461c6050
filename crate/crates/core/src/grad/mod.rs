//! Analytic gradients of the gate-weighted probit risk.
//!
//! The backward pass mirrors `model::gate_forward_batch` row by row. With
//! `u = W3 f0`, `r = |f0|`, `F = |W3|_F` and `c = eps / (4 r F)` the
//! constrained logits are `c u`, so both norms are differentiated:
//!
//! ```text
//! dW3 = sum_j c_j (ds_j f0_j^T - (ds_j . u_j) W3 / F^2)
//! df0_j = c_j (W3^T ds_j - (ds_j . u_j) f0_j / r_j^2)
//! ```
//!
//! Rows where the projection is degenerate (`c = 0`) contribute nothing to
//! the gating-network gradients.

use crate::data::Dataset;
use crate::model::{expert_forward_batch, gate_forward_batch, LdpConfig, MoEModel, ModelError};
use crate::numerics::{normal_pdf, Probability, RandomSource};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

mod precise;

use precise::{Dd, PreciseModel};

/// One tensor per model parameter, same shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGradients {
    pub experts: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Parameter tensors in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tensor {
    Experts,
    W1,
    B1,
    W2,
    B2,
    W3,
    B3,
}

impl Tensor {
    pub const ALL: [Tensor; 7] = [
        Tensor::Experts,
        Tensor::W1,
        Tensor::B1,
        Tensor::W2,
        Tensor::B2,
        Tensor::W3,
        Tensor::B3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Experts => "experts",
            Tensor::W1 => "w1",
            Tensor::B1 => "b1",
            Tensor::W2 => "w2",
            Tensor::B2 => "b2",
            Tensor::W3 => "w3",
            Tensor::B3 => "b3",
        }
    }

    pub fn len(self, model: &MoEModel) -> usize {
        let g = &model.gating;
        match self {
            Tensor::Experts => model.experts.weights.len(),
            Tensor::W1 => g.w1.len(),
            Tensor::B1 => g.b1.len(),
            Tensor::W2 => g.w2.len(),
            Tensor::B2 => g.b2.len(),
            Tensor::W3 => g.w3.len(),
            Tensor::B3 => g.b3.len(),
        }
    }
}

/// A single scalar parameter: tensor plus row-major flat index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coord {
    pub tensor: Tensor,
    pub index: usize,
}

fn flat_mut(slice: Option<&mut [f64]>) -> &mut [f64] {
    slice.expect("parameter tensors are standard-layout")
}

fn flat(slice: Option<&[f64]>) -> &[f64] {
    slice.expect("parameter tensors are standard-layout")
}

pub fn parameter_mut(model: &mut MoEModel, coord: Coord) -> &mut f64 {
    let g = &mut model.gating;
    let data = match coord.tensor {
        Tensor::Experts => flat_mut(model.experts.weights.as_slice_mut()),
        Tensor::W1 => flat_mut(g.w1.as_slice_mut()),
        Tensor::B1 => flat_mut(g.b1.as_slice_mut()),
        Tensor::W2 => flat_mut(g.w2.as_slice_mut()),
        Tensor::B2 => flat_mut(g.b2.as_slice_mut()),
        Tensor::W3 => flat_mut(g.w3.as_slice_mut()),
        Tensor::B3 => flat_mut(g.b3.as_slice_mut()),
    };
    &mut data[coord.index]
}

impl ParamGradients {
    pub fn zeros_like(model: &MoEModel) -> Self {
        let g = &model.gating;
        ParamGradients {
            experts: Array2::zeros(model.experts.weights.raw_dim()),
            w1: Array2::zeros(g.w1.raw_dim()),
            b1: Array1::zeros(g.b1.raw_dim()),
            w2: Array2::zeros(g.w2.raw_dim()),
            b2: Array1::zeros(g.b2.raw_dim()),
            w3: Array2::zeros(g.w3.raw_dim()),
            b3: Array1::zeros(g.b3.raw_dim()),
        }
    }

    pub fn get(&self, coord: Coord) -> f64 {
        let data = match coord.tensor {
            Tensor::Experts => flat(self.experts.as_slice()),
            Tensor::W1 => flat(self.w1.as_slice()),
            Tensor::B1 => flat(self.b1.as_slice()),
            Tensor::W2 => flat(self.w2.as_slice()),
            Tensor::B2 => flat(self.b2.as_slice()),
            Tensor::W3 => flat(self.w3.as_slice()),
            Tensor::B3 => flat(self.b3.as_slice()),
        };
        data[coord.index]
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.experts
            .iter()
            .chain(self.w1.iter())
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .chain(self.w3.iter())
            .chain(self.b3.iter())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `params -= lr * grad`.
    pub fn descend(&self, model: &mut MoEModel, lr: f64) {
        let g = &mut model.gating;
        model.experts.weights.scaled_add(-lr, &self.experts);
        g.w1.scaled_add(-lr, &self.w1);
        g.b1.scaled_add(-lr, &self.b1);
        g.w2.scaled_add(-lr, &self.w2);
        g.b2.scaled_add(-lr, &self.b2);
        g.w3.scaled_add(-lr, &self.w3);
        g.b3.scaled_add(-lr, &self.b3);
    }
}

fn check_batch(
    model: &MoEModel,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<(), ModelError> {
    model.validate()?;
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if x.ncols() != model.d() || y.len() != x.nrows() {
        return Err(ModelError::Dimension {
            what: "batch",
            expected: format!("(m, {}) with m labels", model.d()),
            found: format!("{:?} with {} labels", x.dim(), y.len()),
        });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(ModelError::Label(*bad));
    }
    Ok(())
}

/// Mean risk of the rows of `x` and its gradient.
pub fn batch_loss_and_gradients(
    model: &MoEModel,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<(f64, ParamGradients), ModelError> {
    check_batch(model, x, y)?;
    let m = x.nrows() as f64;
    let params = &model.gating;
    let fwd = gate_forward_batch(model, x);
    let exp = expert_forward_batch(&model.experts, x, y);
    let gate = &fwd.gate;
    let per_example = (gate * &exp.losses).sum_axis(Axis(1));
    let loss = per_example.sum() / m;

    // expert weights: d Phi(z)/dz = -pdf(z), dz/dw = y x / |x|
    let mut coeff = gate * &exp.margins.mapv(|z| -normal_pdf(z));
    Zip::from(coeff.rows_mut())
        .and(&y)
        .and(&exp.x_norm)
        .for_each(|mut row, &yj, &nj| {
            if nj == 0.0 {
                row.fill(0.0);
            } else {
                row *= yj / nj;
            }
        });
    let experts = coeff.t().dot(&x) / m;

    // softmax: ds_i = g_i (phi_i - L)
    let mut ds = &exp.losses - &per_example.view().insert_axis(Axis(1));
    ds *= gate;
    let b3 = ds.sum_axis(Axis(0)) / m;

    let (w3, df0) = match model.ldp {
        LdpConfig::Unconstrained => (ds.t().dot(&fwd.f0), ds.dot(&params.w3)),
        LdpConfig::Constrained { .. } => {
            let frob = params.w3_frobenius();
            let mut dsc = ds.clone();
            Zip::from(dsc.rows_mut())
                .and(&fwd.scale)
                .for_each(|mut row, &c| row *= c);
            // kappa_j = c_j (ds_j . u_j)
            let kappa = (&dsc * &fwd.raw_logits).sum_axis(Axis(1));
            let mut w3 = dsc.t().dot(&fwd.f0);
            if frob > 0.0 {
                w3.scaled_add(-kappa.sum() / (frob * frob), &params.w3);
            }
            let mut df0 = dsc.dot(&params.w3);
            Zip::from(df0.rows_mut())
                .and(fwd.f0.rows())
                .and(&kappa)
                .and(&fwd.f0_norm)
                .for_each(|mut row, f0, &k, &r| {
                    if r > 0.0 && k != 0.0 {
                        row.scaled_add(-k / (r * r), &f0);
                    }
                });
            (w3, df0)
        }
    };

    let da2 = df0 * &fwd.f0.mapv(|t| 1.0 - t * t);
    let w2 = da2.t().dot(&fwd.hidden1) / m;
    let b2 = da2.sum_axis(Axis(0)) / m;
    let mut da1 = da2.dot(&params.w2);
    Zip::from(&mut da1).and(&fwd.pre1).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
    let w1 = da1.t().dot(&x) / m;
    let b1 = da1.sum_axis(Axis(0)) / m;

    Ok((
        loss,
        ParamGradients {
            experts: standard(experts),
            w1: standard(w1),
            b1,
            w2: standard(w2),
            b2,
            w3: standard(w3 / m),
            b3,
        },
    ))
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Empirical risk of `batch` and its exact gradient.
pub fn loss_and_gradients(
    model: &MoEModel,
    batch: &Dataset,
) -> Result<(Probability, ParamGradients), ModelError> {
    let (loss, grads) = batch_loss_and_gradients(model, batch.features(), batch.labels())?;
    Ok((Probability::saturating(loss), grads))
}

/// `|a - b| / max(|a|, |b|)`, or `|a - b|` when both are below 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over `coords`.
///
/// The perturbed risks are evaluated in double-double arithmetic with the
/// exact offsets `+-step`, so the difference quotient carries truncation
/// error only.
pub fn finite_difference_check(
    model: &MoEModel,
    batch: &Dataset,
    coords: &[Coord],
    step: f64,
) -> Result<f64, ModelError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let (x, y) = (batch.features(), batch.labels());
    let (_, grads) = batch_loss_and_gradients(model, x, y)?;
    let mut probe = PreciseModel::new(model);
    let mut worst = 0.0f64;
    for &coord in coords {
        let t = Tensor::ALL.iter().position(|&t| t == coord.tensor).expect("known tensor");
        let base = probe.tensors[t][coord.index].hi;
        probe.set(t, coord.index, base, step);
        let up = probe.risk(x, y);
        probe.set(t, coord.index, base, -step);
        let down = probe.risk(x, y);
        probe.set(t, coord.index, base, 0.0);
        let numeric = ((up - down) / Dd::from_f64(2.0 * step)).to_f64();
        worst = worst.max(relative_error(grads.get(coord), numeric));
    }
    Ok(worst)
}

/// `count` coordinates drawn uniformly (with replacement) over all scalars.
pub fn sample_coordinates(model: &MoEModel, count: usize, rng: &mut RandomSource) -> Vec<Coord> {
    let sizes: Vec<usize> = Tensor::ALL.iter().map(|t| t.len(model)).collect();
    let total: usize = sizes.iter().sum();
    (0..count)
        .map(|_| {
            let mut k = rng.index_below(total);
            let mut t = 0;
            while k >= sizes[t] {
                k -= sizes[t];
                t += 1;
            }
            Coord {
                tensor: Tensor::ALL[t],
                index: k,
            }
        })
        .collect()
}

/// Every scalar parameter, in storage order.
pub fn all_coordinates(model: &MoEModel) -> Vec<Coord> {
    Tensor::ALL
        .iter()
        .flat_map(|&tensor| (0..tensor.len(model)).map(move |index| Coord { tensor, index }))
        .collect()
}
