use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{init_params, Activation, Batch, ModelSpec};
use crate::oracle::{Counting, EvalCounts, MlpLoss, Objective, Quadratic};
use crate::param::ParamVector;
use crate::Error;

fn exact(hp: HyperParams) -> HyperParams {
    HyperParams {
        momentum: 0.0,
        weight_decay: 0.0,
        ..hp
    }
}

fn mlp_problem(seed: u64) -> (MlpLoss, ParamVector, Vec<Batch>) {
    let spec = ModelSpec::new(3, vec![8], 3, Activation::Tanh, seed);
    let w = init_params(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let batches = (0..4)
        .map(|_| {
            let inputs = (0..6 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels = (0..6).map(|_| rng.random_range(0..3)).collect();
            Batch::new(inputs, 3, labels).unwrap()
        })
        .collect();
    (MlpLoss::new(spec).unwrap(), w, batches)
}

fn run(config: &OptimizerConfig, steps: usize, seed: u64) -> Vec<ParamVector> {
    let (m, mut w, batches) = mlp_problem(seed);
    let mut state = OptimizerState::new(w.layout(), seed);
    let mut traj = Vec::with_capacity(steps);
    for t in 0..steps {
        w = step(&m, &w, &batches[t % batches.len()], &mut state, config)
            .unwrap()
            .0;
        traj.push(w.clone());
    }
    traj
}

#[test]
fn zeroth_perturbation_examples() {
    let d = zeroth_perturbation(&ParamVector::from_vec(vec![3.0, 4.0]), 0.2, 0.0);
    assert!((d.as_slice()[0] - 0.12).abs() < 1e-15 && (d.as_slice()[1] - 0.16).abs() < 1e-15);
    assert!(zeroth_perturbation(&ParamVector::from_vec(vec![3.0, 4.0]), 0.0, 0.0).is_zero());
    let z = zeroth_perturbation(&ParamVector::from_vec(vec![0.0, 0.0]), 0.2, 1e-12);
    assert!(z.is_zero() && z.ensure_finite("z").is_ok());
}

#[test]
fn decompose_examples() {
    let g = ParamVector::from_vec(vec![1.0, -2.0, 3.0]);
    let t = ParamVector::from_vec(vec![0.5, 0.5, 0.5]);
    assert_eq!(decompose(&g, &t, 0.0).unwrap(), g);
    assert!(decompose(&g, &g, 1.0).unwrap().is_zero());
    assert!(decompose(&g, &ParamVector::from_vec(vec![1.0]), 0.5).is_err());
}

#[test]
fn decompose_with_cosine_coefficient_is_orthogonal() {
    // Equal norms make σ·g_full the projection of g_batch onto g_full.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let full = ParamVector::from_vec((0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
        let raw = ParamVector::from_vec((0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
        let batch = raw.scale(full.norm() / raw.norm());
        let sigma = full.dot(&batch) / (full.norm() * batch.norm());
        let noise = decompose(&batch, &full, sigma).unwrap();
        assert!(noise.dot(&full).abs() <= 1e-8 * full.norm() * noise.norm().max(1e-300));
    }
}

#[test]
fn ema_examples() {
    let t = update_ema(
        &ParamVector::from_vec(vec![0.0, 0.0]),
        &ParamVector::from_vec(vec![10.0, 0.0]),
        0.9,
    )
    .unwrap();
    assert!((t.as_slice()[0] - 1.0).abs() < 1e-12 && t.as_slice()[1] == 0.0);

    let mut m = ParamVector::from_vec(vec![0.0]);
    let mut seen = Vec::new();
    for g in [1.0, 2.0, 3.0] {
        m = update_ema(&m, &ParamVector::from_vec(vec![g]), 0.5).unwrap();
        seen.push(m.as_slice()[0]);
    }
    assert_eq!(seen, vec![0.5, 1.25, 2.125]);

    let g = ParamVector::from_vec(vec![2.0, -1.0]);
    let mut m = ParamVector::from_vec(vec![0.0, 0.0]);
    for k in 1..=30 {
        m = update_ema(&m, &g, 0.8).unwrap();
        let err = m.sub(&g).norm() / g.norm();
        assert!((err - 0.8f64.powi(k)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn ema_matches_closed_form(
        m0 in prop::collection::vec(-5.0f64..5.0, 3),
        grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40),
        lambda in 0.05f64..0.95,
    ) {
        let mut m = ParamVector::from_vec(m0.clone());
        for g in &grads {
            m = update_ema(&m, &ParamVector::from_vec(g.clone()), lambda).unwrap();
        }
        let k = grads.len() as i32;
        let closed: Vec<f64> = (0..3)
            .map(|i| {
                lambda.powi(k) * m0[i]
                    + (1.0 - lambda)
                        * grads.iter().enumerate().map(|(j, g)| lambda.powi(k - 1 - j as i32) * g[i]).sum::<f64>()
            })
            .collect();
        let closed = ParamVector::from_vec(closed);
        prop_assert!(m.sub(&closed).norm() <= 1e-10 * closed.norm().max(1.0));
    }

    #[test]
    fn perturbations_stay_inside_the_ball(seed in 0u64..500, rho in 0.0f64..1.0, sigma in 0.0f64..1.0) {
        let (m, mut w, batches) = mlp_problem(seed % 5);
        let hp = HyperParams { rho, sigma, c: 0.0, ..HyperParams::default() };
        let config = OptimizerConfig::new(OptimizerKind::Flad, hp);
        let mut state = OptimizerState::new(w.layout(), seed);
        for batch in &batches[..3] {
            let (next, r) = step(&m, &w, batch, &mut state, &config).unwrap();
            prop_assert!(r.delta0_norm <= rho * (1.0 + 1e-12));
            prop_assert!(r.delta1_norm <= rho * (1.0 + 1e-12));
            prop_assert!((r.delta0_norm - rho).abs() <= 1e-9 * rho);
            prop_assert!((r.delta1_norm - rho).abs() <= 1e-9 * rho);
            w = next;
        }
    }
}

#[test]
fn flad_hand_step_on_quadratic() {
    let q = Quadratic::diagonal(&[2.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![1.0, 0.0]);
    let hp = exact(HyperParams {
        lr: 0.1,
        rho: 0.1,
        gamma: 0.0,
        sigma: 0.0,
        c: 0.0,
        ..HyperParams::default()
    });
    let mut state = OptimizerState::new(w.layout(), 0);
    let (next, report) = flad_step(&q, &w, &Batch::zeros(2), &mut state, &hp).unwrap();
    assert!((report.delta0_norm - 0.1).abs() < 1e-15);
    assert!((next.as_slice()[0] - 0.78).abs() < 1e-12);
    assert_eq!(next.as_slice()[1], 0.0);
}

#[test]
fn zeroth_hand_step_on_quadratic() {
    let q = Quadratic::diagonal(&[1.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![3.0, 4.0]);
    let hp = exact(HyperParams {
        lr: 0.1,
        rho: 0.5,
        c: 0.0,
        ..HyperParams::default()
    });
    let mut state = OptimizerState::new(w.layout(), 0);
    let (next, _) = baseline_step(
        OptimizerKind::Zeroth,
        PerturbationVariant::Standard,
        &q,
        &w,
        &Batch::zeros(2),
        &mut state,
        &hp,
    )
    .unwrap();
    assert!((next.as_slice()[0] - 2.67).abs() < 1e-12);
    assert!((next.as_slice()[1] - 3.56).abs() < 1e-12);
}

#[test]
fn flad_with_no_radius_or_weight_is_sgd() {
    let (m, w, batches) = mlp_problem(1);
    let hp = exact(HyperParams {
        rho: 0.0,
        gamma: 0.0,
        ..HyperParams::default()
    });
    let mut state = OptimizerState::new(w.layout(), 0);
    let (next, _) = flad_step(&m, &w, &batches[0], &mut state, &hp).unwrap();
    let expected = w.axpy(-hp.lr, &m.grad(&w, &batches[0]).unwrap());
    assert_eq!(next, expected);
}

#[test]
fn reduction_chain_is_bitwise() {
    let hp = HyperParams::default();
    let flad = |hp| OptimizerConfig::new(OptimizerKind::Flad, hp);
    let sigma0 = HyperParams { sigma: 0.0, ..hp };
    assert_eq!(
        run(&flad(sigma0), 30, 2),
        run(
            &OptimizerConfig::new(OptimizerKind::Combined, sigma0),
            30,
            2
        )
    );
    let gamma0 = HyperParams { gamma: 0.0, ..hp };
    assert_eq!(
        run(&flad(gamma0), 30, 2),
        run(
            &OptimizerConfig::new(OptimizerKind::FladZeroth, gamma0),
            30,
            2
        )
    );
    let plain = HyperParams {
        rho: 0.0,
        gamma: 0.0,
        momentum: 0.0,
        weight_decay: 0.0,
        ..hp
    };
    assert_eq!(
        run(&flad(plain), 30, 2),
        run(&OptimizerConfig::new(OptimizerKind::Sgd, plain), 30, 2)
    );
}

#[test]
fn flad_costs_two_gradients_and_two_hvps() {
    let (m, mut w, batches) = mlp_problem(4);
    let counted = Counting::new(&m);
    let mut state = OptimizerState::new(w.layout(), 0);
    let hp = HyperParams::default();
    for (t, b) in batches.iter().enumerate() {
        counted.reset();
        w = flad_step(&counted, &w, b, &mut state, &hp).unwrap().0;
        assert_eq!(
            counted.counts(),
            EvalCounts {
                loss: 0,
                grad: 2,
                hvp: 2
            },
            "step {t}"
        );
    }
}

#[test]
fn first_order_without_radius_descends_the_gradient_norm() {
    let (m, w, batches) = mlp_problem(5);
    let hp = exact(HyperParams {
        rho: 0.0,
        lr: 0.05,
        ..HyperParams::default()
    });
    let mut state = OptimizerState::new(w.layout(), 0);
    let (next, _) = baseline_step(
        OptimizerKind::First,
        PerturbationVariant::Standard,
        &m,
        &w,
        &batches[0],
        &mut state,
        &hp,
    )
    .unwrap();
    let g = m.grad(&w, &batches[0]).unwrap();
    let direction = m.hvp(&w, &batches[0], &g.normalized(hp.c)).unwrap();
    assert_eq!(next, w.axpy(-hp.lr, &direction));
}

#[test]
fn combined_equals_flad_without_decomposition() {
    let hp = HyperParams {
        sigma: 0.0,
        ..HyperParams::default()
    };
    let a = run(&OptimizerConfig::new(OptimizerKind::Combined, hp), 10, 8);
    let b = run(&OptimizerConfig::new(OptimizerKind::Flad, hp), 10, 8);
    assert_eq!(a, b);
}

#[test]
fn variant_directions() {
    let s = ParamVector::from_vec(vec![1.0, 2.0, -3.0]);
    let n = ParamVector::from_vec(vec![0.5, 0.5, 0.5]);
    let prev = ParamVector::from_vec(vec![9.0, 9.0, 9.0]);
    let mut rng = crate::seed::rng(1, crate::seed::Stream::Perturbation, 0);
    let mut ctx = |variant, previous| {
        variant_perturbation(
            variant,
            PerturbationContext {
                s: &s,
                tracker: &n,
                sigma: 0.4,
                previous,
                rng: &mut rng,
            },
        )
        .unwrap()
    };
    let full = ctx(PerturbationVariant::FullComponent, None);
    let noise = ctx(PerturbationVariant::NoiseComponent, None);
    assert!(full.add(&noise).sub(&s).max_abs() < 1e-15);
    assert_eq!(ctx(PerturbationVariant::PreBatch, None), s);
    assert_eq!(ctx(PerturbationVariant::PreBatch, Some(&prev)), prev);
    assert_eq!(ctx(PerturbationVariant::Standard, Some(&prev)), s);
    let r = ctx(PerturbationVariant::Random, None);
    assert!((r.norm() - 1.0).abs() < 1e-12);

    let mut r1 = crate::seed::rng(9, crate::seed::Stream::Perturbation, 0);
    let mut r2 = crate::seed::rng(9, crate::seed::Stream::Perturbation, 0);
    let mk = |rng| {
        variant_perturbation(
            PerturbationVariant::Random,
            PerturbationContext {
                s: &s,
                tracker: &n,
                sigma: 0.4,
                previous: None,
                rng,
            },
        )
        .unwrap()
    };
    assert_eq!(mk(&mut r1), mk(&mut r2));
}

#[test]
fn noise_variant_matches_flad_first_order_perturbation() {
    // flad-1st with noise and first with the noise-component variant are the same rule.
    let hp = HyperParams::default();
    let a = run(&OptimizerConfig::new(OptimizerKind::FladFirst, hp), 8, 3);
    let b = run(
        &OptimizerConfig::new(OptimizerKind::First, hp)
            .with_variant(PerturbationVariant::NoiseComponent),
        8,
        3,
    );
    assert_eq!(a, b);
}

#[test]
fn every_variant_runs_on_first_order_kinds() {
    for variant in PerturbationVariant::ALL {
        for kind in [OptimizerKind::First, OptimizerKind::Combined] {
            let config = OptimizerConfig::new(kind, HyperParams::default()).with_variant(variant);
            config.validate().unwrap();
            let traj = run(&config, 5, 1);
            assert!(traj.iter().all(|w| w.ensure_finite("w").is_ok()));
        }
    }
}

#[test]
fn degenerate_directions_fall_back_to_sgd() {
    // σ = 1 with m = n = current values on a deterministic quadratic after the
    // trackers converge would take many steps; force it directly instead.
    let q = Quadratic::diagonal(&[1.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![1.0, 1.0]);
    let hp = exact(HyperParams {
        sigma: 1.0,
        lambda0: 1e-300,
        lambda1: 1e-300,
        lr: 0.5,
        ..HyperParams::default()
    });
    let mut state = OptimizerState::new(w.layout(), 0);
    let (next, report) = flad_step(&q, &w, &Batch::zeros(2), &mut state, &hp).unwrap();
    assert!(report.degenerate);
    assert_eq!(next.as_slice(), &[0.5, 0.5]);
}

#[test]
fn non_finite_gradient_aborts_with_diagnostic() {
    let q = Quadratic::diagonal(&[1.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![f64::INFINITY, 0.0]);
    let mut state = OptimizerState::new(w.layout(), 0);
    let err = flad_step(
        &q,
        &w,
        &Batch::zeros(2),
        &mut state,
        &HyperParams::default(),
    )
    .unwrap_err();
    assert!(err.is_numerical(), "{err}");
    assert!(matches!(err, Error::NonFinite { .. }));
}

#[test]
fn config_validation() {
    assert!(
        OptimizerConfig::new(OptimizerKind::Flad, HyperParams::default())
            .validate()
            .is_ok()
    );
    let bad = OptimizerConfig::new(OptimizerKind::Flad, HyperParams::default())
        .with_variant(PerturbationVariant::Random);
    assert!(bad.validate().is_err());
    let bad = OptimizerConfig::new(OptimizerKind::Sgd, HyperParams::default())
        .with_variant(PerturbationVariant::Random);
    assert!(bad.validate().is_err());
    let err = HyperParams {
        rho: -1.0,
        ..HyperParams::default()
    }
    .validate("optimizer.")
    .unwrap_err();
    assert!(err.to_string().contains("rho"));
    assert!(HyperParams {
        rho: 0.0,
        ..HyperParams::default()
    }
    .validate("")
    .is_ok());
}
