use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracy matrix: row `p` holds accuracy on tasks `0..=p`
/// after training phase `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLedger {
    phases: usize,
    rows: Vec<Vec<f64>>,
}

impl MetricsLedger {
    pub fn new(phases: usize) -> Self {
        Self {
            phases,
            rows: Vec::with_capacity(phases),
        }
    }

    /// Ledger from complete rows; validates shape and range.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut ledger = Self::new(rows.len());
        for row in rows {
            ledger.push_row(row)?;
        }
        Ok(ledger)
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.phases
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let p = self.rows.len();
        if p >= self.phases {
            return Err(Error::IncompleteLedger(format!(
                "ledger already holds {} phases",
                self.phases
            )));
        }
        if row.len() != p + 1 {
            return Err(Error::IncompleteLedger(format!(
                "row {p} must have {} entries, got {}",
                p + 1,
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "accuracy {v} outside [0, 1]"
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    fn require_complete(&self) -> Result<()> {
        if self.is_complete() && self.phases > 0 {
            Ok(())
        } else {
            Err(Error::IncompleteLedger(format!(
                "{} of {} phases recorded",
                self.rows.len(),
                self.phases
            )))
        }
    }

    /// Mean accuracy over all tasks after the last phase.
    pub fn acc_final(&self) -> Result<f64> {
        self.require_complete()?;
        Ok(mean(self.rows.last().unwrap()))
    }

    /// Mean over phases of the mean accuracy on tasks seen so far.
    pub fn aaa(&self) -> Result<f64> {
        self.require_complete()?;
        Ok(self.rows.iter().map(|r| mean(r)).sum::<f64>() / self.rows.len() as f64)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
