//! Flat parameter vectors with layer-shape metadata.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped slice of the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Span {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered partition of a parameter vector into spans. Cheap to clone.
#[derive(Clone, PartialEq, Eq)]
pub struct Layout {
    spans: Arc<[Span]>,
    len: usize,
}

impl Layout {
    pub fn new(spans: Vec<Span>) -> Self {
        let len = spans.iter().map(Span::len).sum();
        Self {
            spans: spans.into(),
            len,
        }
    }

    /// Single unnamed span of length `n`.
    pub fn flat(n: usize) -> Self {
        Self::new(vec![Span::new("w", vec![n])])
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Start offset and length of every span, in order.
    pub fn ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.spans.iter().scan(0usize, |offset, s| {
            let start = *offset;
            *offset += s.len();
            Some((start, s.len()))
        })
    }
}

impl fmt::Debug for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.spans.iter()).finish()
    }
}

impl Serialize for Layout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spans.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Layout::new(Vec::<Span>::deserialize(d)?))
    }
}

/// Dense parameter vector. All optimizer math runs on this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                context: "ParamVector::new",
                expected: layout.len(),
                found: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    /// Vector with a single flat span.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let layout = Layout::flat(values.len());
        Self { values, layout }
    }

    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout: layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn check_len(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.with_values(self.values.iter().map(|x| alpha * x).collect())
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &ParamVector) -> Self {
        debug_assert_eq!(self.len(), other.len());
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ParamVector) -> Self {
        debug_assert_eq!(self.len(), other.len());
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ParamVector) -> Self {
        debug_assert_eq!(self.len(), other.len());
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// In-place `self += alpha * other`.
    pub fn axpy_mut(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// `self / (‖self‖ + c)`, the guarded normalization used throughout.
    pub fn normalized(&self, c: f64) -> Self {
        let denom = self.norm() + c;
        if denom == 0.0 {
            return ParamVector::zeros(&self.layout);
        }
        self.with_values(self.values.iter().map(|x| x / denom).collect())
    }

    /// `alpha · self / (‖self‖ + c)`
    pub fn scaled_direction(&self, alpha: f64, c: f64) -> Self {
        let denom = self.norm() + c;
        if denom == 0.0 {
            return ParamVector::zeros(&self.layout);
        }
        self.with_values(self.values.iter().map(|x| alpha * x / denom).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Error naming `quantity` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, quantity: &'static str) -> Result<()> {
        match self.values.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(index) => Err(Error::NonFinite {
                quantity,
                index,
                value: self.values[index],
            }),
        }
    }

    /// Values of the span at `index` in the layout.
    pub fn span(&self, index: usize) -> &[f64] {
        let (start, len) = self
            .layout
            .ranges()
            .nth(index)
            .expect("span index out of range");
        &self.values[start..start + len]
    }
}
