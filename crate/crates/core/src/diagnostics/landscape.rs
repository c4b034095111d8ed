use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::oracle::Objective;
use crate::param::ParamVector;
use crate::seed::{self, Stream};

/// Loss on a 1-D or 2-D grid around the current parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    #[serde(skip)]
    pub directions: Vec<ParamVector>,
    pub grid: Vec<f64>,
    pub scale: f64,
    /// Row-major over (first, second) direction; `None` where the loss was not finite.
    pub losses: Vec<Option<f64>>,
}

impl LandscapeSlice {
    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Loss at grid indices `(i, j)`; `j` is ignored for 1-D slices.
    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        if self.dims() == 1 {
            self.losses[i]
        } else {
            self.losses[i * self.grid.len() + j]
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        if self.dims() == 1 {
            out.push_str("alpha,loss\n");
            for (a, l) in self.grid.iter().zip(&self.losses) {
                let _ = writeln!(out, "{a},{}", cell(*l));
            }
        } else {
            out.push_str("alpha,beta,loss\n");
            for (i, a) in self.grid.iter().enumerate() {
                for (j, b) in self.grid.iter().enumerate() {
                    let _ = writeln!(out, "{a},{b},{}", cell(self.at(i, j)));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        std::fs::write(path, super::svg::render(self)).map_err(|e| Error::io(path, e))
    }
}

/// `n` evenly spaced points on `[-1, 1]`, with an exact 0 when `n` is odd.
pub fn default_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let half = (n - 1) as f64 / 2.0;
            (0..n).map(|i| (i as f64 - half) / half).collect()
        }
    }
}

/// Evaluate `loss(w + α·scale·d1 [+ β·scale·d2])` over `grid` (× `grid`).
pub fn landscape_slice<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    directions: &[ParamVector],
    grid: &[f64],
    scale: f64,
    batch: &Batch,
) -> Result<LandscapeSlice> {
    if !(1..=2).contains(&directions.len()) {
        return Err(Error::InvalidArgument(format!(
            "a slice needs 1 or 2 directions, got {}",
            directions.len()
        )));
    }
    for d in directions {
        d.check_len(w, "slice direction")?;
        if (d.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "slice direction has norm {}, expected 1",
                d.norm()
            )));
        }
    }
    if grid.is_empty() || !scale.is_finite() {
        return Err(Error::InvalidArgument(
            "slice needs a non-empty grid and finite scale".into(),
        ));
    }
    let eval = |coeffs: &[f64]| -> Result<Option<f64>> {
        let point = if coeffs.iter().all(|&a| a == 0.0) {
            w.clone()
        } else {
            let mut p = w.clone();
            for (a, d) in coeffs.iter().zip(directions) {
                p.axpy_mut(a * scale, d);
            }
            p
        };
        match oracle.loss(&point, batch) {
            Ok(l) if l.is_finite() => Ok(Some(l)),
            Ok(_) => Ok(None),
            Err(e) if e.is_numerical() => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut losses = Vec::with_capacity(grid.len().pow(directions.len() as u32));
    for &a in grid {
        if directions.len() == 1 {
            losses.push(eval(&[a])?);
        } else {
            for &b in grid {
                losses.push(eval(&[a, b])?);
            }
        }
    }
    Ok(LandscapeSlice {
        directions: directions.to_vec(),
        grid: grid.to_vec(),
        scale,
        losses,
    })
}

/// Gaussian direction rescaled span by span to the norm of `w` on that span,
/// then normalized to unit length overall.
pub fn random_direction(w: &ParamVector, seed: u64, index: u64) -> ParamVector {
    let mut rng = seed::rng(seed, Stream::Probe, (1 << 32) + index);
    let raw: Vec<f64> = (0..w.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut d = raw.clone();
    for (start, len) in w.layout().ranges() {
        let end = start + len;
        let wn = w.as_slice()[start..end]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let dn = d[start..end].iter().map(|x| x * x).sum::<f64>().sqrt();
        let f = if dn > 0.0 { wn / dn } else { 0.0 };
        d[start..end].iter_mut().for_each(|x| *x *= f);
    }
    let mut d = w.with_values(d);
    if d.is_zero() {
        // `w` is zero everywhere: keep the unscaled draw.
        d = w.with_values(raw);
    }
    let n = d.norm();
    d.scale(1.0 / n)
}
