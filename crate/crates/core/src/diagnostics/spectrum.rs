use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::oracle::Objective;
use crate::param::ParamVector;
use crate::seed::{self, Stream};

/// Power-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSettings {
    pub k: usize,
    pub iters: usize,
    pub tol: f64,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            k: 5,
            iters: 100,
            tol: 1e-6,
        }
    }
}

/// Hutchinson estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub mean: f64,
    /// Standard error of the mean; 0 for a single sample.
    pub std_error: f64,
    pub samples: usize,
}

/// Top of the Hessian spectrum at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenvectors: Vec<ParamVector>,
    /// `‖Hv − λv‖` for each pair.
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub trace: Option<TraceEstimate>,
    pub tr_h_sigma: Option<f64>,
}

const REFINE: f64 = 1e-3;

fn gaussian(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn project_out(v: &mut ParamVector, basis: &[ParamVector]) {
    for b in basis {
        let c = v.dot(b);
        v.axpy_mut(-c, b);
    }
}

/// Top-`k` Hessian eigenpairs by power iteration with deflation.
///
/// Each vector is iterated in the orthogonal complement of those already
/// found. A pair counts as converged once `‖Hv − λv‖ ≤ tol·(|λ| + 1)`; the
/// iteration keeps refining down to `REFINE·tol` while budget remains, so that
/// later vectors are not limited by the error of earlier ones.
pub fn top_eigenpairs<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    settings: EigenSettings,
    seed: u64,
) -> Result<SpectrumReport> {
    if settings.k == 0 {
        return Err(Error::InvalidArgument("need k >= 1 eigenpairs".into()));
    }
    if settings.k > w.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot extract {} eigenpairs from a {}-dimensional Hessian",
            settings.k,
            w.len()
        )));
    }
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            settings.tol
        )));
    }
    let mut pairs: Vec<(f64, ParamVector, f64, bool, usize)> = Vec::with_capacity(settings.k);
    let mut basis: Vec<ParamVector> = Vec::with_capacity(settings.k);
    for j in 0..settings.k {
        let mut rng = seed::rng(seed, Stream::Probe, j as u64);
        let mut v = w.with_values(gaussian(w.len(), &mut rng));
        project_out(&mut v, &basis);
        v = v.scale(1.0 / v.norm());
        let (mut lambda, mut residual, mut converged, mut used) = (0.0, f64::INFINITY, false, 0);
        for it in 1..=settings.iters.max(1) {
            used = it;
            let hv = oracle.hvp(w, batch, &v)?;
            hv.ensure_finite("Hessian-vector product")?;
            lambda = v.dot(&hv);
            residual = hv.axpy(-lambda, &v).norm();
            let bound = settings.tol * (lambda.abs() + 1.0);
            converged = residual <= bound;
            if residual <= REFINE * bound {
                break;
            }
            let mut next = hv;
            project_out(&mut next, &basis);
            project_out(&mut next, &basis);
            let norm = next.norm();
            if norm == 0.0 {
                break;
            }
            v = next.scale(1.0 / norm);
        }
        basis.push(v.clone());
        pairs.push((lambda, v, residual, converged, used));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(SpectrumReport {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        residuals: pairs.iter().map(|p| p.2).collect(),
        converged: pairs.iter().map(|p| p.3).collect(),
        iterations: pairs.iter().map(|p| p.4).collect(),
        eigenvectors: pairs.into_iter().map(|p| p.1).collect(),
        trace: None,
        tr_h_sigma: None,
    })
}

/// `Tr(H) ≈ mean ⟨z, Hz⟩` over Rademacher probes `z`.
pub fn hutchinson_trace<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    samples: usize,
    seed: u64,
) -> Result<TraceEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "need at least one Hutchinson sample".into(),
        ));
    }
    let mut rng = seed::rng(seed, Stream::Probe, u64::MAX);
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = w.with_values(
            (0..w.len())
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
        );
        let hz = oracle.hvp(w, batch, &z)?;
        hz.ensure_finite("Hessian-vector product")?;
        draws.push(z.dot(&hz));
    }
    let (mean, var) = mean_and_variance(&draws);
    Ok(TraceEstimate {
        mean,
        std_error: (var / samples as f64).sqrt(),
        samples,
    })
}

/// Mean and unbiased variance, shifted by the first value so that constant
/// input gives exactly zero; the variance of one value is 0.
pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let k = xs[0];
    let (s, ss) = xs.iter().fold((0.0, 0.0), |(s, ss), x| {
        (s + (x - k), ss + (x - k) * (x - k))
    });
    (mean, ((ss - s * s / n) / (n - 1.0)).max(0.0))
}

/// Breakdown of a Tr(HΣ) estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrHSigma {
    pub value: f64,
    pub eigenvalues: Vec<f64>,
    /// Unbiased variance over batches of the gradient projection on each eigenvector.
    pub projected_variance: Vec<f64>,
    pub batches: usize,
}

/// `Σ_j λ_j · Var_b⟨g_b, v_j⟩` for given eigenpairs and per-batch vectors.
pub fn tr_h_sigma_projected(
    eigenvalues: &[f64],
    eigenvectors: &[ParamVector],
    grads: &[ParamVector],
) -> Result<TrHSigma> {
    if eigenvalues.is_empty() || eigenvalues.len() != eigenvectors.len() {
        return Err(Error::InvalidArgument(
            "need k >= 1 matching eigenpairs".into(),
        ));
    }
    if grads.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "gradient variance needs at least 2 batches, got {}",
            grads.len()
        )));
    }
    let projected_variance: Vec<f64> = eigenvectors
        .iter()
        .map(|v| mean_and_variance(&grads.iter().map(|g| g.dot(v)).collect::<Vec<_>>()).1)
        .collect();
    let value = eigenvalues
        .iter()
        .zip(&projected_variance)
        .map(|(l, s)| l * s)
        .sum();
    Ok(TrHSigma {
        value,
        eigenvalues: eigenvalues.to_vec(),
        projected_variance,
        batches: grads.len(),
    })
}

/// Tr(HΣ) inside the top-`k` eigenspace of the Hessian on the pooled batches,
/// with Σ the covariance of per-batch gradients at `w`.
pub fn tr_h_sigma<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batches: &[Batch],
    settings: EigenSettings,
    seed: u64,
) -> Result<TrHSigma> {
    if settings.k == 0 {
        return Err(Error::InvalidArgument("need k >= 1 eigenpairs".into()));
    }
    if batches.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "gradient variance needs at least 2 batches, got {}",
            batches.len()
        )));
    }
    let pooled = Batch::concat(batches)?;
    let spectrum = top_eigenpairs(oracle, w, &pooled, settings, seed)?;
    let grads = batches
        .iter()
        .map(|b| oracle.grad(w, b))
        .collect::<Result<Vec<_>>>()?;
    tr_h_sigma_projected(&spectrum.eigenvalues, &spectrum.eigenvectors, &grads)
}
