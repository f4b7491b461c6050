mod common;

use common::{eps, random_batch, random_model};
use ldp_moe::numerics::RandomSource;
use ldp_moe::verify::*;
use ndarray::{array, Array2};
use proptest::prelude::*;

#[test]
fn gate_tables_respect_their_budget() {
    let mut rng = RandomSource::new(1);
    let frozen = make_ldp_gate_table(6, 4, GateBudget::Epsilon(0.0), &mut rng).unwrap();
    for row in frozen.outer_iter() {
        assert_eq!(row, frozen.row(0));
    }
    for _ in 0..200 {
        let t = make_ldp_gate_table(12, 6, GateBudget::Epsilon(1.0), &mut rng).unwrap();
        for row in t.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let mut worst: f64 = 0.0;
        for i in 0..6 {
            for a in 0..12 {
                for b in 0..12 {
                    worst = worst.max(t[[a, i]] / t[[b, i]]);
                }
            }
        }
        assert!(worst <= 1.0f64.exp() + 1e-12, "{worst}");
    }
    let free = make_ldp_gate_table(12, 3, GateBudget::Unconstrained, &mut rng).unwrap();
    assert!(max_log_ratio(free.view()) > 1.0);
    assert!(make_ldp_gate_table(2, 2, GateBudget::Epsilon(-1.0), &mut rng).is_err());
}

#[test]
fn faulty_table_breaks_the_budget() {
    for e in [0.0, 0.5, 2.0] {
        let t = faulty_gate_table(e);
        assert!((t[[0, 0]] / t[[1, 0]] - (e.exp() + 0.1)).abs() < 1e-12);
        assert!(max_log_ratio(t.view()) > e);
    }
}

fn single_expert_instance() -> FiniteInstance {
    FiniteInstance {
        gate_table: array![[1.0], [1.0], [1.0]],
        per_expert_losses: array![[0.2], [0.9], [0.4]],
        data_weights: vec![0.5, 0.25, 0.25],
        sample: vec![0, 0, 2, 1],
    }
}

#[test]
fn single_expert_sides_coincide() {
    let inst = single_expert_instance();
    let (r, rs) = (inst.true_risk(), inst.empirical_risk());
    assert!((r - 0.425).abs() < 1e-15);
    assert!((rs - 0.425).abs() < 1e-15);
    for kind in [DeltaKind::Linear, DeltaKind::Catoni { lambda: 2.0 }] {
        let c = check_lemma_delta(&inst, 0.0, kind).unwrap();
        assert!(c.applicable && c.holds);
        assert_eq!(c.lhs, c.rhs);
    }
    let kl = check_lemma_delta(&inst, 0.0, DeltaKind::Kl).unwrap();
    assert!(kl.applicable);
    assert_eq!(kl.lhs, 0.0);
    assert_eq!(kl.rhs, 0.0);
}

#[test]
fn large_epsilon_linear_case_has_nonpositive_lhs() {
    // every expert has true risk above its sample risk
    let inst = FiniteInstance {
        gate_table: array![[0.5, 0.5], [0.3, 0.7]],
        per_expert_losses: array![[0.1, 0.0], [0.9, 1.0]],
        data_weights: vec![0.5, 0.5],
        sample: vec![0, 0, 0],
    };
    let gaps: Vec<f64> = inst
        .expert_true_risks()
        .iter()
        .zip(inst.expert_empirical_risks())
        .map(|(r, s)| r - s)
        .collect();
    assert!(gaps.iter().all(|g| *g >= 0.0));
    let c = check_lemma_delta(&inst, 3.0, DeltaKind::Linear).unwrap();
    assert!(c.lhs <= 0.0 && c.rhs >= 0.0 && c.holds);
}

#[test]
fn kl_case_skips_outside_the_monotone_region() {
    let inst = FiniteInstance {
        gate_table: array![[1.0]],
        per_expert_losses: array![[0.5]],
        data_weights: vec![1.0],
        sample: vec![0],
    };
    let c = check_lemma_delta(&inst, 0.5, DeltaKind::Kl).unwrap();
    assert!(!c.applicable && c.holds);
}

#[test]
fn malformed_instances_are_rejected() {
    let mut inst = single_expert_instance();
    inst.sample = vec![];
    assert!(check_lemma_delta(&inst, 0.0, DeltaKind::Linear).is_err());
    let mut inst = single_expert_instance();
    inst.per_expert_losses[[0, 0]] = 1.5;
    assert!(inst.validate().is_err());
    let mut inst = single_expert_instance();
    inst.data_weights = vec![0.5, 0.5, 0.5];
    assert!(inst.validate().is_err());
    assert!(check_lemma_delta(&single_expert_instance(), 0.0, DeltaKind::Catoni { lambda: 0.5 }).is_err());
}

#[test]
fn lemma_holds_on_random_instances() {
    let mut rng = RandomSource::new(42);
    let mut applicable_kl = 0;
    for _ in 0..300 {
        for e in [0.0, 0.1, 1.0, 3.0] {
            let inst = random_instance(&mut rng, e).unwrap();
            for kind in [DeltaKind::Linear, DeltaKind::Catoni { lambda: 0.8 }, DeltaKind::Kl] {
                let c = check_lemma_delta(&inst, e, kind).unwrap();
                assert!(c.slack >= -1e-12, "{kind:?} eps={e}: {c:?}");
                if c.applicable && kind == DeltaKind::Kl {
                    applicable_kl += 1;
                }
            }
        }
    }
    assert!(applicable_kl > 50, "{applicable_kl}");
}

#[test]
fn softmax_ratio_examples() {
    let table = array![[0.4, -1.0], [1.0, 0.2], [-0.3, 0.9]];
    let off = check_softmax_ldp(table.view(), 1.0, 0.0, &[0.3, -0.2]).unwrap();
    assert_eq!(off.max_log_ratio, 0.0);

    for (beta, b) in [(1.0, 1.0), (0.7, 1.3), (2.0, 0.25)] {
        let extremes = array![[b, -b], [-b, b]];
        let r = check_softmax_ldp(extremes.view(), b, beta, &[0.0, 0.0]).unwrap();
        assert!(r.holds);
        assert!(r.max_log_ratio >= 2.0 * beta * b - 1e-12 && r.max_log_ratio <= 4.0 * beta * b);
    }

    let mut rng = RandomSource::new(9);
    for _ in 0..1000 {
        let (k, n) = (2 + rng.index_below(10), 1 + rng.index_below(6));
        let t = Array2::from_shape_fn((k, n), |_| rng.uniform_in(-1.3, 1.3));
        let biases: Vec<f64> = (0..n).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let r = check_softmax_ldp(t.view(), 1.3, 0.7, &biases).unwrap();
        assert!(r.max_log_ratio <= 3.64 + 1e-12);
    }
    assert!(matches!(
        check_softmax_ldp(array![[2.0]].view(), 1.0, 1.0, &[0.0]),
        Err(VerifyError::Unbounded { .. })
    ));
}

#[test]
fn vacuousness_demo_matches_the_limit() {
    let mut rng = RandomSource::new(4);
    let zero = nonadaptive_vacuousness_demo(0.0, 2000, &mut rng).unwrap();
    assert!((zero.empirical_risk_lower - zero.empirical_risk).abs() < 1e-12);
    for e in [0.0, 1.0] {
        let d = nonadaptive_vacuousness_demo(e, 10_000, &mut rng).unwrap();
        assert!(d.empirical_risk >= d.empirical_risk_lower - 1e-12);
        assert!(d.empirical_risk_lower >= 0.45 * (-e).exp(), "{d:?}");
        assert!(d.bound_value >= e.exp() / 2.0 - 0.05, "{d:?}");
    }
    assert!(nonadaptive_vacuousness_demo(1.0, 0, &mut rng).is_err());
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let mut rng = RandomSource::new(12);
    for e in [0.0, 1.0, 3.0] {
        let inst = random_instance(&mut rng, e).unwrap();
        let mc = monte_carlo_risk(&inst, 100_000, &mut rng).unwrap();
        assert!(mc.within_three_sigma, "{mc:?}");
        assert_eq!(mc.exact, inst.true_risk());
    }
}

#[test]
fn trained_style_models_pass_the_pairwise_ratio_test() {
    let mut rng = RandomSource::new(13);
    for e in [0.5, 2.0, 5.0] {
        let model = random_model(&mut rng, 4, 6, 16, eps(e));
        let points = random_batch(&mut rng, 300, 4);
        let worst = empirical_log_ratio(&model, points.features(), 10_000, &mut rng).unwrap();
        assert!(worst <= e + 1e-9, "{worst} > {e}");
    }
}

#[test]
fn suite_passes_and_catches_an_injected_table() {
    let options = VerifyOptions {
        trials: 50,
        monte_carlo_instances: 2,
        monte_carlo_samples: 20_000,
        ..VerifyOptions::default()
    };
    let report = run_suite(&options).unwrap();
    assert!(report.passed(), "{report:#?}");
    for name in ["gate_table_ldp", "lemma_linear", "lemma_catoni", "lemma_kl", "softmax_ldp"] {
        let c = report.checks.iter().find(|c| c.name == name).unwrap();
        assert!(c.trials > 0 && c.worst_slack >= -1e-12);
    }

    let faulty = run_suite(&VerifyOptions {
        inject_faulty_table: true,
        ..options
    })
    .unwrap();
    assert!(!faulty.passed());
    let table = faulty.checks.iter().find(|c| c.name == "gate_table_ldp").unwrap();
    assert_eq!(table.violations, 1);
    assert!(table.detail.as_deref().unwrap().contains("injected"));

    let empty = run_suite(&VerifyOptions {
        trials: 0,
        ..VerifyOptions::default()
    })
    .unwrap();
    assert!(empty.checks.is_empty() && empty.passed());
}

#[test]
fn coverage_simulation_small_run() {
    let report = bound_validity_simulation(&SimulationConfig {
        draws: 10,
        ..SimulationConfig::default()
    })
    .unwrap();
    assert_eq!(report.draws, 10);
    assert!(report.rates().iter().all(|&r| r >= 0.95), "{report:?}");
    assert!(report.mean_true_risk > 0.0 && report.mean_true_risk < 0.1);
    assert!(report.mean_bounds.iter().all(|&b| b < 1.0), "{report:?}");
}

proptest! {
    #[test]
    fn lemma_never_violated(seed in any::<u64>(), e in 0.0f64..4.0, lambda in 0.51f64..6.0) {
        let mut rng = RandomSource::new(seed);
        let inst = random_instance(&mut rng, e).unwrap();
        for kind in [DeltaKind::Linear, DeltaKind::Catoni { lambda }, DeltaKind::Kl] {
            let c = check_lemma_delta(&inst, e, kind).unwrap();
            prop_assert!(c.holds, "{:?} {:?}", kind, c);
        }
    }

    #[test]
    fn generated_tables_stay_within_budget(seed in any::<u64>(), e in 0.0f64..8.0) {
        let mut rng = RandomSource::new(seed);
        let t = make_ldp_gate_table(12, 6, GateBudget::Epsilon(e), &mut rng).unwrap();
        prop_assert!(max_log_ratio(t.view()) <= e + 1e-12);
    }
}
