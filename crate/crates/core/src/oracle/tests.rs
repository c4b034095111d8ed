use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{default_hvp_step, fd_grad, fd_grad_norm_grad, fd_hvp};
use super::*;
use crate::model::{init_params, Activation};

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, classes: usize) -> Batch {
    let inputs = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(inputs, cols, labels).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, like: &ParamVector) -> ParamVector {
    like.with_values(
        (0..like.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn small_mlp(act: Activation, seed: u64) -> (MlpLoss, ParamVector, Batch) {
    let spec = ModelSpec::new(4, vec![6, 5], 3, act, seed);
    let w = init_params(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
    let batch = random_batch(&mut rng, 7, 4, 3);
    (MlpLoss::new(spec).unwrap(), w, batch)
}

/// Straight-line per-example forward pass written against the span layout.
fn reference_loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> f64 {
    let dims = spec.layer_dims();
    let mut total = 0.0;
    for r in 0..batch.rows() {
        let mut a: Vec<f64> = batch.row(r).to_vec();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let wt = w.span(2 * l);
            let b = w.span(2 * l + 1);
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                z[o] = b[o] + (0..fan_in).map(|i| wt[o * fan_in + i] * a[i]).sum::<f64>();
            }
            a = if l + 1 < dims.len() {
                z.iter()
                    .map(|&v| match spec.activation {
                        Activation::Relu => {
                            if v > 0.0 {
                                v
                            } else {
                                0.0
                            }
                        }
                        Activation::Tanh => v.tanh(),
                    })
                    .collect()
            } else {
                z
            };
        }
        let norm: f64 = a.iter().map(|v| v.exp()).sum();
        total += -(a[batch.labels()[r]].exp() / norm).ln();
    }
    total / batch.rows() as f64
}

fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
    a.sub(b).norm() / b.norm().max(1e-300)
}

#[test]
fn quadratic_identity_loss_and_grad() {
    let q = Quadratic::diagonal(&[1.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![3.0, 4.0]);
    let batch = Batch::zeros(2);
    assert_eq!(q.loss(&w, &batch).unwrap(), 12.5);
    assert_eq!(q.grad(&w, &batch).unwrap().as_slice(), &[3.0, 4.0]);
}

#[test]
fn quadratic_null_space_gradient_vanishes() {
    let q = Quadratic::diagonal(&[1.0, 0.0]).unwrap();
    let w = ParamVector::from_vec(vec![0.0, 5.0]);
    assert_eq!(
        q.grad(&w, &Batch::zeros(2)).unwrap().as_slice(),
        &[0.0, 0.0]
    );
}

#[test]
fn quadratic_rejects_indefinite_or_asymmetric() {
    assert!(Quadratic::new(vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]).is_err());
    assert!(Quadratic::new(vec![1.0, 0.5, 0.0, 1.0], vec![0.0, 0.0]).is_err());
    assert!(Quadratic::new(vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0]).is_ok());
}

#[test]
fn quadratic_hvp_is_constant_matrix_product() {
    let q = Quadratic::new(vec![2.0, 1.0, 1.0, 3.0], vec![1.0, -1.0]).unwrap();
    let v = ParamVector::from_vec(vec![1.0, 2.0]);
    for w in [vec![0.0, 0.0], vec![5.0, -7.0]] {
        let hv = q
            .hvp(&ParamVector::from_vec(w), &Batch::zeros(2), &v)
            .unwrap();
        assert_eq!(hv.as_slice(), &[4.0, 7.0]);
    }
}

#[test]
fn uniform_logits_give_ln_two() {
    let spec = ModelSpec::new(3, vec![4], 2, Activation::Relu, 0);
    let w = ParamVector::zeros(&spec.layout());
    let batch = Batch::new(vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0], 3, vec![0, 1]).unwrap();
    let loss = MlpLoss::new(spec).unwrap().loss(&w, &batch).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn mlp_loss_matches_reference_forward() {
    for act in [Activation::Relu, Activation::Tanh] {
        for seed in 0..5 {
            let (m, w, batch) = small_mlp(act, seed);
            let ours = m.loss(&w, &batch).unwrap();
            let reference = reference_loss(m.spec(), &w, &batch);
            assert!(
                (ours - reference).abs() < 1e-12,
                "{act:?}/{seed}: {ours} vs {reference}"
            );
            assert!(ours >= 0.0);
        }
    }
}

#[test]
fn mlp_grad_matches_finite_differences() {
    for act in [Activation::Tanh, Activation::Relu] {
        let (m, w, batch) = small_mlp(act, 3);
        let g = m.grad(&w, &batch).unwrap();
        let fd = fd_grad(&m, &w, &batch, 1e-5).unwrap();
        let err = g.sub(&fd).max_abs();
        assert!(err < 1e-6, "{act:?}: max abs err {err}");
    }
}

#[test]
fn mlp_hvp_matches_finite_difference_hvp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for act in [Activation::Tanh, Activation::Relu] {
        let (m, w, batch) = small_mlp(act, 5);
        let v = random_vector(&mut rng, &w);
        let hv = m.hvp(&w, &batch, &v).unwrap();
        let fd = fd_hvp(&m, &w, &batch, &v, default_hvp_step(&w, &v)).unwrap();
        assert!(rel_err(&hv, &fd) < 1e-3, "{act:?}: {}", rel_err(&hv, &fd));
    }
}

#[test]
fn hvp_of_zero_is_zero() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 1);
    let hv = m.hvp(&w, &batch, &ParamVector::zeros(w.layout())).unwrap();
    assert!(hv.is_zero());
}

#[test]
fn anchor_adds_its_curvature() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 2);
    let n = w.len();
    let anchored = m
        .clone()
        .with_anchor(Anchor {
            center: vec![0.1; n],
            weight: vec![1.0; n],
            strength: 0.5,
        })
        .unwrap();
    let g = anchored.grad(&w, &batch).unwrap();
    assert!(
        g.sub(&fd_grad(&anchored, &w, &batch, 1e-5).unwrap())
            .max_abs()
            < 1e-6
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_vector(&mut rng, &w);
    let diff = anchored
        .hvp(&w, &batch, &v)
        .unwrap()
        .sub(&m.hvp(&w, &batch, &v).unwrap());
    assert!(diff.sub(&v.scale(0.5)).max_abs() < 1e-12);
}

#[test]
fn grad_norm_grad_on_identity_is_unit_gradient() {
    let q = Quadratic::diagonal(&[1.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![3.0, 4.0]);
    let s = grad_norm_grad(&q, &w, &Batch::zeros(2), 1e-12).unwrap();
    assert!((s.as_slice()[0] - 0.6).abs() < 1e-12);
    assert!((s.as_slice()[1] - 0.8).abs() < 1e-12);
}

#[test]
fn grad_norm_grad_at_stationary_point_is_zero() {
    let q = Quadratic::diagonal(&[2.0, 1.0]).unwrap();
    let w = ParamVector::from_vec(vec![0.0, 0.0]);
    let s = grad_norm_grad(&q, &w, &Batch::zeros(2), 1e-12).unwrap();
    assert!(s.is_zero());
    assert!(s.ensure_finite("s").is_ok());
    assert!(grad_norm_grad(&q, &w, &Batch::zeros(2), 0.0).is_err());
}

#[test]
fn grad_norm_grad_matches_fd_of_gradient_norm() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 9);
    let s = grad_norm_grad(&m, &w, &batch, 1e-12).unwrap();
    let fd = fd_grad_norm_grad(&m, &w, &batch, 1e-5).unwrap();
    assert!(rel_err(&s, &fd) < 1e-2, "{}", rel_err(&s, &fd));
}

#[test]
fn fused_grad_norm_grad_matches_unfused() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 4);
    let fused = m.grad_norm_grad(&w, &batch, 1e-12).unwrap();
    let g = m.grad(&w, &batch).unwrap();
    let unfused = m.hvp(&w, &batch, &g.normalized(1e-12)).unwrap();
    assert_eq!(fused.grad, g);
    assert_eq!(fused.value, unfused);
}

#[test]
fn fd_hvp_is_exact_on_quadratics_and_zero_on_zero() {
    let q = Quadratic::new(vec![2.0, 1.0, 1.0, 3.0], vec![0.0, 0.0]).unwrap();
    let w = ParamVector::from_vec(vec![0.5, -0.25]);
    let v = ParamVector::from_vec(vec![1.0, 2.0]);
    let fd = fd_hvp(&q, &w, &Batch::zeros(2), &v, 1e-3).unwrap();
    assert!((fd.as_slice()[0] - 4.0).abs() < 1e-10);
    assert!((fd.as_slice()[1] - 7.0).abs() < 1e-10);
    let zero = fd_hvp(
        &q,
        &w,
        &Batch::zeros(2),
        &ParamVector::zeros(w.layout()),
        1e-3,
    )
    .unwrap();
    assert!(zero.is_zero());
    assert!(fd_hvp(&q, &w, &Batch::zeros(2), &v, f64::NAN).is_err());
    assert!(fd_hvp(&q, &w, &Batch::zeros(2), &v, 0.0).is_err());
}

#[test]
fn fd_hvp_error_is_second_order() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = random_vector(&mut rng, &w).normalized(0.0);
    let exact = m.hvp(&w, &batch, &v).unwrap();
    let e1 = fd_hvp(&m, &w, &batch, &v, 2e-2).unwrap().sub(&exact).norm();
    let e2 = fd_hvp(&m, &w, &batch, &v, 1e-2).unwrap().sub(&exact).norm();
    let ratio = e1 / e2;
    assert!(
        (3.0..5.0).contains(&ratio),
        "halving ε shrank error by {ratio}"
    );
}

#[test]
fn dimension_mismatches_are_errors() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 0);
    let short = ParamVector::from_vec(vec![0.0; w.len() - 1]);
    assert!(matches!(
        m.loss(&short, &batch),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(m.hvp(&w, &batch, &short).is_err());
    let wide = Batch::zeros(5);
    assert!(m.grad(&w, &wide).is_err());
    let bad_label = Batch::new(vec![0.0; 4], 4, vec![3]).unwrap();
    assert!(m.loss(&w, &bad_label).is_err());
}

#[test]
fn counting_wrapper_counts_by_kind() {
    let (m, w, batch) = small_mlp(Activation::Tanh, 0);
    let c = Counting::new(&m);
    c.loss(&w, &batch).unwrap();
    c.grad(&w, &batch).unwrap();
    c.grad_norm_grad(&w, &batch, 1e-12).unwrap();
    c.hvp(&w, &batch, &w).unwrap();
    assert_eq!(
        c.counts(),
        EvalCounts {
            loss: 1,
            grad: 1,
            hvp: 2
        }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_symmetric_and_linear(seed in 0u64..10_000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let (m, w, batch) = small_mlp(Activation::Tanh, seed % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_vector(&mut rng, &w);
        let v = random_vector(&mut rng, &w);
        let hu = m.hvp(&w, &batch, &u).unwrap();
        let hv = m.hvp(&w, &batch, &v).unwrap();
        let (a, b) = (hu.dot(&v), hv.dot(&u));
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-12));

        let combo = m.hvp(&w, &batch, &u.scale(alpha).axpy(beta, &v)).unwrap();
        let expected = hu.scale(alpha).axpy(beta, &hv);
        prop_assert!(combo.sub(&expected).norm() <= 1e-10 * expected.norm().max(1e-12));
    }

    #[test]
    fn oracle_calls_are_pure(seed in 0u64..1000) {
        let (m, w, batch) = small_mlp(Activation::Relu, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_vector(&mut rng, &w);
        prop_assert_eq!(m.loss(&w, &batch).unwrap().to_bits(), m.loss(&w, &batch).unwrap().to_bits());
        prop_assert_eq!(m.grad(&w, &batch).unwrap(), m.grad(&w, &batch).unwrap());
        prop_assert_eq!(m.hvp(&w, &batch, &v).unwrap(), m.hvp(&w, &batch, &v).unwrap());
    }
}
