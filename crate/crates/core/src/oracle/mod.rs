//! Loss oracles: mean minibatch loss, exact gradient and exact Hessian-vector
//! products for softmax cross-entropy MLPs and for quadratics.

pub mod fd;
mod mlp;

use std::cell::Cell;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, ModelSpec};
use crate::param::{Layout, ParamVector};

/// Gradient of the gradient norm, with the gradient it was built from.
#[derive(Debug, Clone)]
pub struct GradNormGrad {
    /// `∇L(w)`
    pub grad: ParamVector,
    /// `∇²L(w) · ∇L(w) / (‖∇L(w)‖ + c)`
    pub value: ParamVector,
}

/// Anything the optimizers and diagnostics can differentiate.
///
/// Implementations must be pure: identical inputs give bitwise identical outputs.
pub trait Objective {
    fn layout(&self) -> Layout;

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64>;

    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)>;

    fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        Ok(self.loss_and_grad(w, batch)?.1)
    }

    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector>;

    /// `∇‖∇L(w)‖` regularized by `c`. Implementations may fuse the gradient and
    /// HVP passes; it is budgeted as one Hessian-vector product.
    fn grad_norm_grad(&self, w: &ParamVector, batch: &Batch, c: f64) -> Result<GradNormGrad> {
        let grad = self.grad(w, batch)?;
        let value = self.hvp(w, batch, &grad.normalized(c))?;
        Ok(GradNormGrad { grad, value })
    }
}

/// Optional ℓ2 pull toward a reference point, restricted by a per-coordinate weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub center: Vec<f64>,
    pub weight: Vec<f64>,
    pub strength: f64,
}

impl Anchor {
    fn loss(&self, w: &[f64]) -> f64 {
        let s: f64 = w
            .iter()
            .zip(&self.center)
            .zip(&self.weight)
            .map(|((x, c), m)| m * (x - c) * (x - c))
            .sum();
        0.5 * self.strength * s
    }

    fn add_grad(&self, w: &[f64], g: &mut [f64]) {
        for (((gi, x), c), m) in g.iter_mut().zip(w).zip(&self.center).zip(&self.weight) {
            *gi += self.strength * m * (x - c);
        }
    }

    fn add_hvp(&self, v: &[f64], h: &mut [f64]) {
        for ((hi, vi), m) in h.iter_mut().zip(v).zip(&self.weight) {
            *hi += self.strength * m * vi;
        }
    }
}

/// Mean softmax cross-entropy of an MLP classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLoss {
    spec: ModelSpec,
    anchor: Option<Anchor>,
}

impl MlpLoss {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, anchor: None })
    }

    pub fn with_anchor(mut self, anchor: Anchor) -> Result<Self> {
        let n = self.spec.param_count();
        if anchor.center.len() != n || anchor.weight.len() != n {
            return Err(Error::DimensionMismatch {
                context: "anchor",
                expected: n,
                found: anchor.center.len(),
            });
        }
        self.anchor = Some(anchor);
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check(&self, w: &ParamVector, batch: &Batch) -> Result<()> {
        if w.len() != self.spec.param_count() {
            return Err(Error::DimensionMismatch {
                context: "MLP parameters",
                expected: self.spec.param_count(),
                found: w.len(),
            });
        }
        mlp::check_batch(&self.spec, batch)
    }

    /// Predicted class per row.
    pub fn predict(&self, w: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
        if batch.cols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "batch input width",
                expected: self.spec.input_dim,
                found: batch.cols(),
            });
        }
        // Labels may exceed the head during evaluation; predictions never read them.
        let unlabeled = Batch::new(batch.inputs().to_vec(), batch.cols(), vec![0; batch.rows()])?;
        Ok(mlp::forward(&self.spec, w.as_slice(), &unlabeled).predictions())
    }

    fn loss_from_tape(&self, w: &[f64], loss_sum: f64, rows: usize) -> f64 {
        let mut loss = loss_sum / rows as f64;
        if let Some(a) = &self.anchor {
            loss += a.loss(w);
        }
        loss
    }
}

impl Objective for MlpLoss {
    fn layout(&self) -> Layout {
        self.spec.layout()
    }

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(w, batch)?;
        let tape = mlp::forward(&self.spec, w.as_slice(), batch);
        Ok(self.loss_from_tape(w.as_slice(), tape.loss_sum, batch.rows()))
    }

    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check(w, batch)?;
        let ws = w.as_slice();
        let tape = mlp::forward(&self.spec, ws, batch);
        let mut adj = mlp::backward(&self.spec, ws, &tape, batch);
        if let Some(a) = &self.anchor {
            a.add_grad(ws, &mut adj.grad);
        }
        let loss = self.loss_from_tape(ws, tape.loss_sum, batch.rows());
        Ok((loss, w.with_values(adj.grad)))
    }

    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        self.check(w, batch)?;
        w.check_len(v, "hvp direction")?;
        let ws = w.as_slice();
        let tape = mlp::forward(&self.spec, ws, batch);
        let adj = mlp::backward(&self.spec, ws, &tape, batch);
        let mut hv = mlp::hessian_vector(&self.spec, ws, v.as_slice(), &tape, &adj, batch);
        if let Some(a) = &self.anchor {
            a.add_hvp(v.as_slice(), &mut hv);
        }
        Ok(w.with_values(hv))
    }

    fn grad_norm_grad(&self, w: &ParamVector, batch: &Batch, c: f64) -> Result<GradNormGrad> {
        self.check(w, batch)?;
        let ws = w.as_slice();
        let tape = mlp::forward(&self.spec, ws, batch);
        let adj = mlp::backward(&self.spec, ws, &tape, batch);
        // The anchor term enters the gradient but not the cross-entropy adjoints.
        let mut full = adj.grad.clone();
        if let Some(a) = &self.anchor {
            a.add_grad(ws, &mut full);
        }
        let grad = w.with_values(full);
        let direction = grad.normalized(c);
        let mut hv = mlp::hessian_vector(&self.spec, ws, direction.as_slice(), &tape, &adj, batch);
        if let Some(a) = &self.anchor {
            a.add_hvp(direction.as_slice(), &mut hv);
        }
        Ok(GradNormGrad {
            grad,
            value: w.with_values(hv),
        })
    }
}

/// `L(w) = ½ wᵀAw − (b + x̄)ᵀw`, where `x̄` is the mean batch row.
///
/// With a single all-zero row the batch term vanishes; other batches shift the
/// linear term and so model per-batch gradient noise with a fixed Hessian `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Quadratic {
    /// `a` is row-major `n × n`; it must be symmetric PSD to within 1e-10.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if a.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "quadratic matrix",
                expected: n * n,
                found: a.len(),
            });
        }
        const TOL: f64 = 1e-10;
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > TOL {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if n > 0 {
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a));
            let min = eig
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min < -TOL {
                return Err(Error::InvalidArgument(format!(
                    "quadratic matrix is not positive semi-definite (min eigenvalue {min:e})"
                )));
            }
        }
        Ok(Self { n, a, b })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        Self::new(a, vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn check(&self, w: &ParamVector, batch: &Batch) -> Result<()> {
        if w.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "quadratic parameters",
                expected: self.n,
                found: w.len(),
            });
        }
        if batch.cols() != self.n {
            return Err(Error::DimensionMismatch {
                context: "quadratic batch width",
                expected: self.n,
                found: batch.cols(),
            });
        }
        Ok(())
    }

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(a, x)| a * x)
                    .sum()
            })
            .collect()
    }

    fn linear_term(&self, batch: &Batch) -> Vec<f64> {
        let mut lin = self.b.clone();
        let inv = 1.0 / batch.rows() as f64;
        for r in 0..batch.rows() {
            for (l, x) in lin.iter_mut().zip(batch.row(r)) {
                *l += inv * x;
            }
        }
        lin
    }
}

impl Objective for Quadratic {
    fn layout(&self) -> Layout {
        Layout::flat(self.n)
    }

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(w, batch)?;
        let ws = w.as_slice();
        let aw = self.matvec(ws);
        let lin = self.linear_term(batch);
        let quad: f64 = ws.iter().zip(&aw).map(|(x, y)| x * y).sum();
        let linear: f64 = ws.iter().zip(&lin).map(|(x, y)| x * y).sum();
        Ok(0.5 * quad - linear)
    }

    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let loss = self.loss(w, batch)?;
        let lin = self.linear_term(batch);
        let g = self
            .matvec(w.as_slice())
            .into_iter()
            .zip(lin)
            .map(|(a, l)| a - l)
            .collect();
        Ok((loss, w.with_values(g)))
    }

    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        self.check(w, batch)?;
        w.check_len(v, "hvp direction")?;
        Ok(w.with_values(self.matvec(v.as_slice())))
    }
}

/// Either oracle kind behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum LossOracle {
    Mlp(MlpLoss),
    Quadratic(Quadratic),
}

impl From<MlpLoss> for LossOracle {
    fn from(m: MlpLoss) -> Self {
        LossOracle::Mlp(m)
    }
}

impl From<Quadratic> for LossOracle {
    fn from(q: Quadratic) -> Self {
        LossOracle::Quadratic(q)
    }
}

impl Objective for LossOracle {
    fn layout(&self) -> Layout {
        match self {
            LossOracle::Mlp(m) => m.layout(),
            LossOracle::Quadratic(q) => q.layout(),
        }
    }

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        match self {
            LossOracle::Mlp(m) => m.loss(w, batch),
            LossOracle::Quadratic(q) => q.loss(w, batch),
        }
    }

    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        match self {
            LossOracle::Mlp(m) => m.loss_and_grad(w, batch),
            LossOracle::Quadratic(q) => q.loss_and_grad(w, batch),
        }
    }

    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        match self {
            LossOracle::Mlp(m) => m.hvp(w, batch, v),
            LossOracle::Quadratic(q) => q.hvp(w, batch, v),
        }
    }

    fn grad_norm_grad(&self, w: &ParamVector, batch: &Batch, c: f64) -> Result<GradNormGrad> {
        match self {
            LossOracle::Mlp(m) => m.grad_norm_grad(w, batch, c),
            LossOracle::Quadratic(q) => q.grad_norm_grad(w, batch, c),
        }
    }
}

/// Evaluation counts recorded by [`Counting`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub loss: usize,
    pub grad: usize,
    pub hvp: usize,
}

/// Wraps an objective and counts evaluations by kind.
pub struct Counting<O> {
    inner: O,
    loss: Cell<usize>,
    grad: Cell<usize>,
    hvp: Cell<usize>,
}

impl<O: Objective> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            loss: Cell::new(0),
            grad: Cell::new(0),
            hvp: Cell::new(0),
        }
    }

    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            loss: self.loss.get(),
            grad: self.grad.get(),
            hvp: self.hvp.get(),
        }
    }

    pub fn reset(&self) {
        self.loss.set(0);
        self.grad.set(0);
        self.hvp.set(0);
    }
}

fn bump(c: &Cell<usize>) {
    c.set(c.get() + 1);
}

impl<O: Objective> Objective for Counting<O> {
    fn layout(&self) -> Layout {
        self.inner.layout()
    }

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        bump(&self.loss);
        self.inner.loss(w, batch)
    }

    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        bump(&self.grad);
        self.inner.loss_and_grad(w, batch)
    }

    fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        bump(&self.grad);
        self.inner.grad(w, batch)
    }

    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        bump(&self.hvp);
        self.inner.hvp(w, batch, v)
    }

    fn grad_norm_grad(&self, w: &ParamVector, batch: &Batch, c: f64) -> Result<GradNormGrad> {
        bump(&self.hvp);
        self.inner.grad_norm_grad(w, batch, c)
    }
}

impl<O: Objective + ?Sized> Objective for &O {
    fn layout(&self) -> Layout {
        (**self).layout()
    }
    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        (**self).loss(w, batch)
    }
    fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        (**self).loss_and_grad(w, batch)
    }
    fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        (**self).grad(w, batch)
    }
    fn hvp(&self, w: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        (**self).hvp(w, batch, v)
    }
    fn grad_norm_grad(&self, w: &ParamVector, batch: &Batch, c: f64) -> Result<GradNormGrad> {
        (**self).grad_norm_grad(w, batch, c)
    }
}

/// `∇‖∇L(w)‖` with the `+c` guard.
pub fn grad_norm_grad<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    c: f64,
) -> Result<ParamVector> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "guard constant c must be > 0, got {c}"
        )));
    }
    Ok(oracle.grad_norm_grad(w, batch, c)?.value)
}

#[cfg(test)]
mod tests;
