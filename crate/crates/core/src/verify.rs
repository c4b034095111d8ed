//! Self-checks of the analytic routes against independent references:
//! finite differences, dense Hessians, closed-form EMAs and hand arithmetic.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::cl::MetricsLedger;
use crate::diagnostics::{top_eigenpairs, EigenSettings};
use crate::error::Result;
use crate::model::{init_params, Activation, Batch, ModelSpec};
use crate::optim::update_ema;
use crate::oracle::fd::{default_hvp_step, dense_hessian, fd_grad, fd_hvp};
use crate::oracle::{MlpLoss, Objective};
use crate::param::ParamVector;
use crate::seed::{self, Stream};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed error.
    pub observed: f64,
    pub threshold: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} observed {:.3e} threshold {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.threshold
        )
    }
}

fn check(name: &str, observed: f64, threshold: f64) -> Check {
    Check {
        name: name.to_string(),
        passed: observed.is_finite() && observed < threshold,
        observed,
        threshold,
    }
}

/// MLP problem with uniform inputs in [-1, 1].
pub fn mlp_problem(
    input: usize,
    hidden: &[usize],
    classes: usize,
    act: Activation,
    rows: usize,
    seed: u64,
) -> Result<(MlpLoss, ParamVector, Batch)> {
    let spec = ModelSpec::new(input, hidden.to_vec(), classes, act, seed);
    let w = init_params(&spec)?;
    let mut rng = seed::rng(seed, Stream::Dataset, 500);
    let inputs = (0..rows * input)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Ok((MlpLoss::new(spec)?, w, Batch::new(inputs, input, labels)?))
}

fn unit(w: &ParamVector, seed: u64, index: u64) -> ParamVector {
    let mut rng = seed::rng(seed, Stream::Probe, (3 << 32) + index);
    let v = ParamVector::new(
        (0..w.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        w.layout().clone(),
    )
    .expect("layout matches");
    v.scale(1.0 / v.norm())
}

type Problem = (MlpLoss, ParamVector, Batch);

fn problems() -> Result<Vec<Problem>> {
    Ok(vec![
        mlp_problem(4, &[8], 3, Activation::Relu, 16, 1)?,
        mlp_problem(10, &[32, 16], 5, Activation::Tanh, 16, 2)?,
        mlp_problem(20, &[64, 32], 10, Activation::Relu, 16, 3)?,
    ])
}

/// Max component error between the analytic and central-difference gradients.
pub fn fd_gradient_error(problems: &[Problem]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (o, w, b) in problems {
        let g = o.grad(w, b)?;
        // Small enough that ReLU kinks are rarely straddled.
        let fd = fd_grad(o, w, b, 1e-6)?;
        worst = worst.max(g.sub(&fd).max_abs());
    }
    Ok(worst)
}

/// Relative error `‖Hv − FD‖ / ‖Hv‖` over a few random directions.
pub fn fd_hvp_error(problems: &[Problem]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, (o, w, b)) in problems.iter().enumerate() {
        for j in 0..3 {
            let v = unit(w, i as u64, j);
            let hv = o.hvp(w, b, &v)?;
            // Well below the usual step: a straddled ReLU kink would swamp the difference.
            let fd = fd_hvp(o, w, b, &v, 1e-2 * default_hvp_step(w, &v))?;
            worst = worst.max(hv.sub(&fd).norm() / hv.norm().max(1e-300));
        }
    }
    Ok(worst)
}

/// `|⟨u, Hv⟩ − ⟨v, Hu⟩|` for unit `u, v`.
pub fn hvp_symmetry_error(problems: &[Problem]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, (o, w, b)) in problems.iter().enumerate() {
        let (u, v) = (unit(w, i as u64, 10), unit(w, i as u64, 11));
        let err = (u.dot(&o.hvp(w, b, &v)?) - v.dot(&o.hvp(w, b, &u)?)).abs();
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `‖H(au + bv) − aHu − bHv‖` relative to `‖aHu‖ + ‖bHv‖`.
pub fn hvp_linearity_error(problems: &[Problem]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, (o, w, batch)) in problems.iter().enumerate() {
        let (u, v) = (unit(w, i as u64, 20), unit(w, i as u64, 21));
        let (a, b) = (1.7, -0.6);
        let combined = o.hvp(w, batch, &u.scale(a).axpy(b, &v))?;
        let (hu, hv) = (o.hvp(w, batch, &u)?.scale(a), o.hvp(w, batch, &v)?.scale(b));
        let err = combined.sub(&hu).sub(&hv).norm() / (hu.norm() + hv.norm()).max(1e-300);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Relative gap between the power-iteration top eigenvalues and the dense
/// eigendecomposition of a Hessian assembled from HVP columns.
pub fn dense_eigen_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (o, w, b) in [
        mlp_problem(5, &[12], 4, Activation::Tanh, 24, 4)?,
        mlp_problem(6, &[10], 3, Activation::Relu, 24, 5)?,
    ] {
        let n = w.len();
        assert!(n <= 200);
        let h = dense_hessian(&o, &w, &b)?;
        let mut dense: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &h))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        let settings = EigenSettings {
            k: 2,
            iters: 20_000,
            tol: 1e-10,
        };
        let r = top_eigenpairs(&o, &w, &b, settings, 0)?;
        let mut power = r.eigenvalues.clone();
        power.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        for (p, d) in power.iter().zip(&dense) {
            worst = worst.max((p - d).abs() / d.abs());
        }
    }
    Ok(worst)
}

/// Iterated EMA against `λᵏ m₀ + (1 − λ) Σ λ^{k−1−j} g_j`, plus the
/// 0.5 / 1.25 / 2.125 sequence.
pub fn ema_error() -> Result<f64> {
    let mut rng = seed::rng(0, Stream::Probe, 4 << 32);
    let lambda = 0.9;
    let grads: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut m = ParamVector::from_vec(vec![0.0; 4]);
    for g in &grads {
        m = update_ema(&m, &ParamVector::from_vec(g.clone()), lambda)?;
    }
    let k = grads.len() as i32;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let closed: f64 = (1.0 - lambda)
            * grads
                .iter()
                .enumerate()
                .map(|(j, g)| lambda.powi(k - 1 - j as i32) * g[i])
                .sum::<f64>();
        worst = worst.max((m.as_slice()[i] - closed).abs());
    }
    let mut m = ParamVector::from_vec(vec![0.0]);
    for (g, want) in [(1.0, 0.5), (2.0, 1.25), (3.0, 2.125)] {
        m = update_ema(&m, &ParamVector::from_vec(vec![g]), 0.5)?;
        worst = worst.max((m.as_slice()[0] - want).abs());
    }
    Ok(worst)
}

/// Acc and AAA of the two-phase hand ledger against 0.85 and 0.925.
pub fn metric_error() -> Result<f64> {
    let ledger = MetricsLedger::from_rows(vec![vec![1.0], vec![0.8, 0.9]])?;
    Ok((ledger.acc_final()? - 0.85)
        .abs()
        .max((ledger.aaa()? - 0.925).abs()))
}

/// Run every check.
pub fn run_all() -> Result<Vec<Check>> {
    let problems = problems()?;
    Ok(vec![
        check(
            "fd-gradient max component",
            fd_gradient_error(&problems)?,
            1e-5,
        ),
        check("fd-hvp relative", fd_hvp_error(&problems)?, 1e-3),
        check("hvp symmetry", hvp_symmetry_error(&problems)?, 1e-8),
        check("hvp linearity", hvp_linearity_error(&problems)?, 1e-8),
        check("dense-hessian eigenvalues", dense_eigen_error()?, 1e-4),
        check("ema closed form", ema_error()?, 1e-12),
        check("metrics hand arithmetic", metric_error()?, 1e-12),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all().unwrap() {
            println!("{c}");
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn problems_fit_the_size_limit() {
        for (o, w, _) in problems().unwrap() {
            assert!(w.len() <= 5000);
            assert_eq!(w.len(), o.spec().param_count());
        }
    }

    #[test]
    fn failing_check_is_reported() {
        let c = check("x", 2.0, 1.0);
        assert!(!c.passed);
        assert!(c.to_string().starts_with("FAIL"));
        assert!(!check("nan", f64::NAN, 1.0).passed);
    }
}
