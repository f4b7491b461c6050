mod common;

use common::{eps, random_batch, random_model};
use ldp_moe::data::Dataset;
use ldp_moe::grad::{
    all_coordinates, finite_difference_check, loss_and_gradients, relative_error,
    sample_coordinates, Coord, Tensor,
};
use ldp_moe::model::{empirical_risk, LdpConfig, MoEModel};
use ldp_moe::numerics::{normal_pdf, RandomSource};
use ndarray::{array, Array1};
use proptest::prelude::*;

#[test]
fn zero_model_has_closed_form_gradient() {
    let (d, n) = (3, 4);
    let x = array![[1.0, 2.0, 2.0], [0.0, -3.0, 4.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
    let y = vec![1.0, -1.0, -1.0, 1.0];
    let m = y.len() as f64;
    let data = Dataset::new(x.clone(), Array1::from(y.clone()), "hand").unwrap();
    for ldp in [LdpConfig::Unconstrained, eps(2.0)] {
        let model = MoEModel::zeros(d, n, 8, ldp);
        let (loss, g) = loss_and_gradients(&model, &data).unwrap();
        assert_eq!(loss.get(), 0.5);
        let mut direction = [0.0; 3];
        for j in 0..y.len() {
            let norm = x.row(j).dot(&x.row(j)).sqrt();
            if norm > 0.0 {
                for k in 0..d {
                    direction[k] += y[j] * x[[j, k]] / norm;
                }
            }
        }
        for i in 0..n {
            for k in 0..d {
                let expected = -(1.0 / n as f64) / m * normal_pdf(0.0) * direction[k];
                assert!((g.experts[[i, k]] - expected).abs() < 1e-15);
            }
        }
        for t in [&g.w1, &g.w2, &g.w3] {
            assert!(t.iter().all(|&v| v == 0.0));
        }
        assert!(g.b3.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn finite_differences_agree_over_random_trials() {
    let mut rng = RandomSource::new(0x5eed);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let ldp = match trial % 4 {
            0 => LdpConfig::Unconstrained,
            1 => eps(0.5),
            2 => eps(4.0),
            _ => eps(10.0),
        };
        let d = 1 + rng.index_below(6);
        let n = 1 + rng.index_below(4);
        let hidden = if trial % 10 == 0 { 64 } else { 2 + rng.index_below(14) };
        let model = random_model(&mut rng, d, n, hidden, ldp);
        let m = 1 + rng.index_below(12);
        let batch = random_batch(&mut rng, m, d);
        let coords = sample_coordinates(&model, 100, &mut rng);
        let err = finite_difference_check(&model, &batch, &coords, 1e-5).unwrap();
        assert!(err <= 1e-5, "trial {trial} ({ldp}): relative error {err}");
        worst = worst.max(err);
    }
    assert!(worst > 0.0);
}

#[test]
fn spec_sized_instance_all_coordinates() {
    let mut rng = RandomSource::new(17);
    for ldp in [LdpConfig::Unconstrained, eps(2.0)] {
        let model = random_model(&mut rng, 5, 3, 12, ldp);
        let batch = random_batch(&mut rng, 8, 5);
        let coords = sample_coordinates(&model, 200, &mut rng);
        assert!(finite_difference_check(&model, &batch, &coords, 1e-5).unwrap() <= 1e-5);
        let every = all_coordinates(&model);
        assert_eq!(every.len(), model.parameter_count());
        assert!(finite_difference_check(&model, &batch, &every, 1e-5).unwrap() <= 1e-5);
    }
}

#[test]
fn zero_budget_freezes_gating_network() {
    let mut rng = RandomSource::new(3);
    let model = random_model(&mut rng, 4, 3, 10, eps(0.0));
    let batch = random_batch(&mut rng, 16, 4);
    let (_, g) = loss_and_gradients(&model, &batch).unwrap();
    for t in [&g.w1, &g.w2, &g.w3] {
        assert!(t.iter().all(|&v| v == 0.0));
    }
    assert!(g.b1.iter().chain(g.b2.iter()).all(|&v| v == 0.0));
    assert!(g.b3.iter().any(|&v| v != 0.0));
    // loss does not depend on W1 at all, so the difference quotient is exactly 0
    let w1: Vec<Coord> = (0..10).map(|index| Coord { tensor: Tensor::W1, index }).collect();
    assert_eq!(finite_difference_check(&model, &batch, &w1, 1e-5).unwrap(), 0.0);
}

#[test]
fn coarse_step_is_less_accurate() {
    let mut rng = RandomSource::new(8);
    let model = random_model(&mut rng, 3, 2, 6, LdpConfig::Unconstrained);
    let batch = random_batch(&mut rng, 6, 3);
    let coords = all_coordinates(&model);
    let fine = finite_difference_check(&model, &batch, &coords, 1e-5).unwrap();
    let coarse = finite_difference_check(&model, &batch, &coords, 1e-2).unwrap();
    assert!(coarse > fine, "coarse {coarse} vs fine {fine}");
}

#[test]
fn relative_error_falls_back_to_absolute() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1e-10, 3e-10) - 2e-10).abs() < 1e-24);
    assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
}

#[test]
fn expert_gradient_scales_with_gate_mass() {
    // eps = 0 fixes the gate to softmax(b3); identical experts differ only by g_i
    let mut rng = RandomSource::new(21);
    let mut model = random_model(&mut rng, 3, 4, 6, eps(0.0));
    let w = model.experts.weights.row(0).to_owned();
    for mut row in model.experts.weights.rows_mut() {
        row.assign(&w);
    }
    let batch = random_batch(&mut rng, 10, 3);
    let gate = ldp_moe::model::gate(&model, &[0.0; 3]).unwrap();
    let (_, g) = loss_and_gradients(&model, &batch).unwrap();
    for i in 1..4 {
        for k in 0..3 {
            let lhs = g.experts[[i, k]] / gate[i];
            let rhs = g.experts[[0, k]] / gate[0];
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_descent_step_lowers_risk(seed in any::<u64>(), constrained in any::<bool>()) {
        let ldp = if constrained { eps(3.0) } else { LdpConfig::Unconstrained };
        let mut rng = RandomSource::new(seed);
        let mut model = random_model(&mut rng, 3, 3, 8, ldp);
        let batch = random_batch(&mut rng, 12, 3);
        let (before, g) = loss_and_gradients(&model, &batch).unwrap();
        prop_assert!(g.is_finite());
        let norm = g.norm();
        prop_assume!(norm > 1e-6);
        g.descend(&mut model, 1e-4 / norm);
        let after = empirical_risk(&model, &batch).unwrap();
        prop_assert!(after.get() <= before.get());
    }
}
