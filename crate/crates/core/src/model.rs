//! Model descriptions, minibatches and parameter initialization.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Layout, ParamVector, Span};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub(crate) fn d1(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    #[inline]
    pub(crate) fn d2(self, a: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
        }
    }
}

/// Fully connected classifier shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
        activation: Activation,
        init_seed: u64,
    ) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            activation,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::Config(format!("hidden layer {i} has zero width")));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least 2 output classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Layout {
        let mut spans = Vec::new();
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            spans.push(Span::new(format!("layer{l}.weight"), vec![fan_out, fan_in]));
            spans.push(Span::new(format!("layer{l}.bias"), vec![fan_out]));
        }
        Layout::new(spans)
    }

    /// Standard deviation of the init distribution for a layer.
    pub fn init_std(&self, fan_in: usize, fan_out: usize) -> f64 {
        match self.activation {
            Activation::Relu => (2.0 / fan_in as f64).sqrt(),
            Activation::Tanh => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

/// He (relu) or Xavier (tanh) normal weights, zero biases.
pub fn init_params(spec: &ModelSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.param_count());
    for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let std = spec.init_std(fan_in, fan_out);
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut rng = seed::rng(spec.init_seed, Stream::Init, l as u64);
        values.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(values, spec.layout())
}

/// Widen the output layer to `classes`, zero-initializing the new rows.
pub fn grow_head(
    spec: &ModelSpec,
    w: &ParamVector,
    classes: usize,
) -> Result<(ModelSpec, ParamVector)> {
    if w.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "grow_head",
            expected: spec.param_count(),
            found: w.len(),
        });
    }
    if classes < spec.classes {
        return Err(Error::InvalidArgument(format!(
            "cannot shrink head from {} to {classes} classes",
            spec.classes
        )));
    }
    let mut grown = spec.clone();
    grown.classes = classes;
    let (fan_in, old_out) = *spec.layer_dims().last().expect("at least one layer");
    let head_start = w.len() - (fan_in * old_out + old_out);
    let src = w.as_slice();
    let mut values = Vec::with_capacity(grown.param_count());
    values.extend_from_slice(&src[..head_start]);
    values.extend_from_slice(&src[head_start..head_start + fan_in * old_out]);
    values.extend(std::iter::repeat_n(0.0, fan_in * (classes - old_out)));
    values.extend_from_slice(&src[head_start + fan_in * old_out..]);
    values.extend(std::iter::repeat_n(0.0, classes - old_out));
    Ok((grown.clone(), ParamVector::new(values, grown.layout())?))
}

/// Minibatch: `rows × cols` row-major inputs plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    cols: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, cols: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument(
                "batch must contain at least one row".into(),
            ));
        }
        if inputs.len() != labels.len() * cols {
            return Err(Error::DimensionMismatch {
                context: "Batch::new",
                expected: labels.len() * cols,
                found: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            cols,
            labels,
        })
    }

    /// One all-zero row; the full-batch input for quadratic objectives.
    pub fn zeros(cols: usize) -> Self {
        Self {
            inputs: vec![0.0; cols],
            cols,
            labels: vec![0],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged batch rows".into()));
        }
        Self::new(rows.concat(), cols, labels)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Concatenate batches with matching column counts.
    pub fn concat(batches: &[Batch]) -> Result<Batch> {
        let cols = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches to concatenate".into()))?
            .cols;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for b in batches {
            if b.cols != cols {
                return Err(Error::DimensionMismatch {
                    context: "Batch::concat",
                    expected: cols,
                    found: b.cols,
                });
            }
            inputs.extend_from_slice(&b.inputs);
            labels.extend_from_slice(&b.labels);
        }
        Batch::new(inputs, cols, labels)
    }
}
