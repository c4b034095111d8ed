//! Curvature diagnostics: Hessian eigenpairs, Hutchinson trace, Tr(HΣ) and
//! loss-landscape slices, with CSV/SVG export.

mod landscape;
mod spectrum;
mod svg;

use std::fmt::Write as _;

pub use landscape::{default_grid, landscape_slice, random_direction, LandscapeSlice};
pub use spectrum::{
    hutchinson_trace, top_eigenpairs, tr_h_sigma, tr_h_sigma_projected, EigenSettings,
    SpectrumReport, TrHSigma, TraceEstimate,
};

impl SpectrumReport {
    /// `index,eigenvalue,residual,converged,iterations` rows, then trace and
    /// Tr(HΣ) lines when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,residual,converged,iterations\n");
        for i in 0..self.eigenvalues.len() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                self.eigenvalues[i], self.residuals[i], self.converged[i], self.iterations[i]
            );
        }
        if let Some(t) = &self.trace {
            let _ = writeln!(out, "trace,{},{},,{}", t.mean, t.std_error, t.samples);
        }
        if let Some(v) = self.tr_h_sigma {
            let _ = writeln!(out, "tr_h_sigma,{v},,,");
        }
        out
    }
}
