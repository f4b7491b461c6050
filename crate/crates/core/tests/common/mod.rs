#![allow(dead_code)]

use ldp_moe::data::Dataset;
use ldp_moe::model::{ExpertBank, GatingParams, LdpConfig, MoEModel};
use ldp_moe::numerics::RandomSource;
use ndarray::{Array1, Array2};

pub fn matrix(rng: &mut RandomSource, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.uniform_in(-scale, scale))
}

pub fn vector(rng: &mut RandomSource, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.uniform_in(-scale, scale))
}

/// Random model with fan-in scaled weights and nonzero biases.
pub fn random_model(rng: &mut RandomSource, d: usize, n: usize, hidden: usize, ldp: LdpConfig) -> MoEModel {
    let gating = GatingParams {
        w1: matrix(rng, hidden, d, 2.0 / (d as f64).sqrt()),
        b1: vector(rng, hidden, 0.5),
        w2: matrix(rng, hidden, hidden, 2.0 / (hidden as f64).sqrt()),
        b2: vector(rng, hidden, 0.5),
        w3: matrix(rng, n, hidden, 1.0),
        b3: vector(rng, n, 1.0),
    };
    let experts = ExpertBank::new(matrix(rng, n, d, 1.5)).unwrap();
    MoEModel::new(experts, gating, ldp).unwrap()
}

pub fn random_batch(rng: &mut RandomSource, m: usize, d: usize) -> Dataset {
    let x = matrix(rng, m, d, 2.0);
    let y = Array1::from_shape_fn(m, |_| if rng.uniform() < 0.5 { 1.0 } else { -1.0 });
    Dataset::new(x, y, "random").unwrap()
}

pub fn eps(e: f64) -> LdpConfig {
    LdpConfig::constrained(e).unwrap()
}
