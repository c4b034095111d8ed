//! Dense MLP with softmax cross-entropy: forward, reverse-mode gradient and
//! the exact Hessian-vector product via the R-operator (forward-over-reverse).

use crate::error::{Error, Result};
use crate::model::{Activation, Batch, ModelSpec};

/// Offsets of one dense layer inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layer_indices(spec: &ModelSpec) -> Vec<LayerIdx> {
    let mut offset = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let idx = LayerIdx {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            idx
        })
        .collect()
}

/// Activations recorded by the forward pass.
pub(crate) struct Tape {
    layers: Vec<LayerIdx>,
    /// Pre-activations per layer, `rows × fan_out`.
    z: Vec<Vec<f64>>,
    /// Hidden activations per hidden layer.
    act: Vec<Vec<f64>>,
    /// Softmax output of the last layer.
    probs: Vec<f64>,
    pub loss_sum: f64,
    rows: usize,
}

impl Tape {
    fn input<'a>(&'a self, l: usize, batch: &'a Batch) -> &'a [f64] {
        if l == 0 {
            batch.inputs()
        } else {
            &self.act[l - 1]
        }
    }

    /// Row-wise argmax of the logits.
    pub fn predictions(&self) -> Vec<usize> {
        let logits = self.z.last().expect("non-empty network");
        let k = self.layers.last().unwrap().fan_out;
        logits
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

pub(crate) fn check_batch(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    if batch.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "batch input width",
            expected: spec.input_dim,
            found: batch.cols(),
        });
    }
    if let Some(&bad) = batch.labels().iter().find(|&&y| y >= spec.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            spec.classes
        )));
    }
    Ok(())
}

/// `out[s, o] = bias[o] + Σ_i W[o, i] · x[s, i]`
fn affine(w: &[f64], idx: LayerIdx, x: &[f64], rows: usize, with_bias: bool) -> Vec<f64> {
    let LayerIdx {
        fan_in, fan_out, ..
    } = idx;
    let weights = &w[idx.w..idx.w + fan_in * fan_out];
    let bias = &w[idx.b..idx.b + fan_out];
    let mut out = vec![0.0; rows * fan_out];
    for s in 0..rows {
        let xs = &x[s * fan_in..(s + 1) * fan_in];
        let os = &mut out[s * fan_out..(s + 1) * fan_out];
        for (o, out_o) in os.iter_mut().enumerate() {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = if with_bias { bias[o] } else { 0.0 };
            for (wi, xi) in row.iter().zip(xs) {
                acc += wi * xi;
            }
            *out_o = acc;
        }
    }
    out
}

pub(crate) fn forward(spec: &ModelSpec, w: &[f64], batch: &Batch) -> Tape {
    let layers = layer_indices(spec);
    let rows = batch.rows();
    let n_layers = layers.len();
    let mut z = Vec::with_capacity(n_layers);
    let mut act: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
    for (l, &idx) in layers.iter().enumerate() {
        let input = if l == 0 { batch.inputs() } else { &act[l - 1] };
        let zl = affine(w, idx, input, rows, true);
        if l + 1 < n_layers {
            act.push(zl.iter().map(|&v| spec.activation.apply(v)).collect());
        }
        z.push(zl);
    }

    let k = spec.classes;
    let logits = z.last().unwrap();
    let mut probs = vec![0.0; rows * k];
    let mut loss_sum = 0.0;
    for s in 0..rows {
        let row = &logits[s * k..(s + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &v) in probs[s * k..(s + 1) * k].iter_mut().zip(row) {
            *p = (v - max).exp();
            sum += *p;
        }
        for p in &mut probs[s * k..(s + 1) * k] {
            *p /= sum;
        }
        let y = batch.labels()[s];
        loss_sum += max + sum.ln() - row[y];
    }

    Tape {
        layers,
        z,
        act,
        probs,
        loss_sum,
        rows,
    }
}

/// Reverse-pass intermediates needed again by the R-operator.
pub(crate) struct Adjoints {
    /// ∂L/∂z per layer.
    dz: Vec<Vec<f64>>,
    /// ∂L/∂a per hidden layer (before the activation derivative).
    da: Vec<Vec<f64>>,
    pub grad: Vec<f64>,
}

pub(crate) fn backward(spec: &ModelSpec, w: &[f64], tape: &Tape, batch: &Batch) -> Adjoints {
    let rows = tape.rows;
    let k = spec.classes;
    let inv_rows = 1.0 / rows as f64;
    let n_layers = tape.layers.len();

    let mut dz_last = tape.probs.clone();
    for (s, &y) in batch.labels().iter().enumerate() {
        dz_last[s * k + y] -= 1.0;
    }
    for v in &mut dz_last {
        *v *= inv_rows;
    }

    let mut grad = vec![0.0; w.len()];
    let mut dz: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut da: Vec<Vec<f64>> = vec![Vec::new(); n_layers - 1];
    dz[n_layers - 1] = dz_last;

    for l in (0..n_layers).rev() {
        let idx = tape.layers[l];
        let (fan_in, fan_out) = (idx.fan_in, idx.fan_out);
        let input = tape.input(l, batch);
        let dzl = &dz[l];
        for s in 0..rows {
            let xs = &input[s * fan_in..(s + 1) * fan_in];
            for o in 0..fan_out {
                let d = dzl[s * fan_out + o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[idx.w + o * fan_in..idx.w + (o + 1) * fan_in];
                for (g, x) in gw.iter_mut().zip(xs) {
                    *g += d * x;
                }
                grad[idx.b + o] += d;
            }
        }
        if l > 0 {
            let weights = &w[idx.w..idx.w + fan_in * fan_out];
            let mut dal = vec![0.0; rows * fan_in];
            for s in 0..rows {
                let das = &mut dal[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let d = dzl[s * fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (a, wi) in das.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *a += wi * d;
                    }
                }
            }
            let zprev = &tape.z[l - 1];
            let aprev = &tape.act[l - 1];
            let dzprev: Vec<f64> = dal
                .iter()
                .zip(zprev.iter().zip(aprev))
                .map(|(&g, (&zv, &av))| g * spec.activation.d1(zv, av))
                .collect();
            da[l - 1] = dal;
            dz[l - 1] = dzprev;
        }
    }

    Adjoints { dz, da, grad }
}

/// Exact `∇²L · v` from a recorded forward/backward pair.
pub(crate) fn hessian_vector(
    spec: &ModelSpec,
    w: &[f64],
    v: &[f64],
    tape: &Tape,
    adj: &Adjoints,
    batch: &Batch,
) -> Vec<f64> {
    let rows = tape.rows;
    let n_layers = tape.layers.len();
    let act: Activation = spec.activation;

    // R-forward.
    let mut rz: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut ract: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
    for l in 0..n_layers {
        let idx = tape.layers[l];
        let input = tape.input(l, batch);
        let mut r = affine(v, idx, input, rows, true);
        if l > 0 {
            let from_state = affine(w, idx, &ract[l - 1], rows, false);
            for (a, b) in r.iter_mut().zip(from_state) {
                *a += b;
            }
        }
        if l + 1 < n_layers {
            ract.push(
                r.iter()
                    .zip(tape.z[l].iter().zip(&tape.act[l]))
                    .map(|(&rv, (&zv, &av))| act.d1(zv, av) * rv)
                    .collect(),
            );
        }
        rz.push(r);
    }

    // R-backward, seeded by the softmax cross-entropy Hessian.
    let k = spec.classes;
    let inv_rows = 1.0 / rows as f64;
    let mut rdz = vec![0.0; rows * k];
    {
        let rlog = &rz[n_layers - 1];
        for s in 0..rows {
            let p = &tape.probs[s * k..(s + 1) * k];
            let r = &rlog[s * k..(s + 1) * k];
            let pr: f64 = p.iter().zip(r).map(|(a, b)| a * b).sum();
            for j in 0..k {
                rdz[s * k + j] = p[j] * (r[j] - pr) * inv_rows;
            }
        }
    }

    let mut out = vec![0.0; w.len()];
    for l in (0..n_layers).rev() {
        let idx = tape.layers[l];
        let (fan_in, fan_out) = (idx.fan_in, idx.fan_out);
        let input = tape.input(l, batch);
        let dzl = &adj.dz[l];
        let ra_in: Option<&[f64]> = if l > 0 { Some(&ract[l - 1]) } else { None };
        for s in 0..rows {
            let xs = &input[s * fan_in..(s + 1) * fan_in];
            for o in 0..fan_out {
                let rd = rdz[s * fan_out + o];
                let d = dzl[s * fan_out + o];
                let hw = &mut out[idx.w + o * fan_in..idx.w + (o + 1) * fan_in];
                if rd != 0.0 {
                    for (h, x) in hw.iter_mut().zip(xs) {
                        *h += rd * x;
                    }
                }
                if let Some(ra) = ra_in {
                    if d != 0.0 {
                        for (h, r) in hw.iter_mut().zip(&ra[s * fan_in..(s + 1) * fan_in]) {
                            *h += d * r;
                        }
                    }
                }
                out[idx.b + o] += rd;
            }
        }
        if l > 0 {
            let weights = &w[idx.w..idx.w + fan_in * fan_out];
            let vweights = &v[idx.w..idx.w + fan_in * fan_out];
            let mut rda = vec![0.0; rows * fan_in];
            for s in 0..rows {
                let ras = &mut rda[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let rd = rdz[s * fan_out + o];
                    let d = dzl[s * fan_out + o];
                    let wrow = &weights[o * fan_in..(o + 1) * fan_in];
                    let vrow = &vweights[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        ras[i] += vrow[i] * d + wrow[i] * rd;
                    }
                }
            }
            let zprev = &tape.z[l - 1];
            let aprev = &tape.act[l - 1];
            let daprev = &adj.da[l - 1];
            let rzprev = &rz[l - 1];
            rdz = (0..rows * fan_in)
                .map(|j| {
                    act.d2(aprev[j]) * rzprev[j] * daprev[j] + act.d1(zprev[j], aprev[j]) * rda[j]
                })
                .collect();
        }
    }
    out
}
