//! Central finite-difference references. These exist to check the analytic
//! routes and never feed the training path.

use super::Objective;
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::param::ParamVector;

fn check_step(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be finite and > 0, got {eps}"
        )));
    }
    Ok(())
}

/// Coordinate-wise central difference of the loss.
pub fn fd_grad<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector> {
    check_step(h)?;
    let mut out = vec![0.0; w.len()];
    let mut probe = w.clone();
    for (i, o) in out.iter_mut().enumerate() {
        let x = w.as_slice()[i];
        probe.as_mut_slice()[i] = x + h;
        let up = oracle.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = x - h;
        let down = oracle.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = x;
        *o = (up - down) / (2.0 * h);
    }
    Ok(w.with_values(out))
}

/// `(∇L(w + εv) − ∇L(w − εv)) / 2ε`
pub fn fd_hvp<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    v: &ParamVector,
    eps: f64,
) -> Result<ParamVector> {
    check_step(eps)?;
    w.check_len(v, "fd_hvp direction")?;
    if v.is_zero() {
        return Ok(ParamVector::zeros(w.layout()));
    }
    let up = oracle.grad(&w.axpy(eps, v), batch)?;
    let down = oracle.grad(&w.axpy(-eps, v), batch)?;
    Ok(up.sub(&down).scale(1.0 / (2.0 * eps)))
}

/// The step used for HVP checks: `1e-4 · (1 + ‖w‖) / (1 + ‖v‖)`.
pub fn default_hvp_step(w: &ParamVector, v: &ParamVector) -> f64 {
    1e-4 * (1.0 + w.norm()) / (1.0 + v.norm())
}

/// Central difference of the scalar map `w ↦ ‖∇L(w)‖`.
pub fn fd_grad_norm_grad<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector> {
    check_step(h)?;
    let mut out = vec![0.0; w.len()];
    let mut probe = w.clone();
    for (i, o) in out.iter_mut().enumerate() {
        let x = w.as_slice()[i];
        probe.as_mut_slice()[i] = x + h;
        let up = oracle.grad(&probe, batch)?.norm();
        probe.as_mut_slice()[i] = x - h;
        let down = oracle.grad(&probe, batch)?.norm();
        probe.as_mut_slice()[i] = x;
        *o = (up - down) / (2.0 * h);
    }
    Ok(w.with_values(out))
}

/// Dense Hessian assembled column by column from analytic HVPs (row-major).
pub fn dense_hessian<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
) -> Result<Vec<f64>> {
    let n = w.len();
    let mut h = vec![0.0; n * n];
    let mut e = ParamVector::zeros(w.layout());
    for j in 0..n {
        e.as_mut_slice()[j] = 1.0;
        let col = oracle.hvp(w, batch, &e)?;
        e.as_mut_slice()[j] = 0.0;
        for i in 0..n {
            h[i * n + j] = col.as_slice()[i];
        }
    }
    // Symmetrize away rounding asymmetry.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = m;
            h[j * n + i] = m;
        }
    }
    Ok(h)
}
