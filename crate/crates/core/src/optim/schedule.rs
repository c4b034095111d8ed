use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch learning-rate/radius schedule and the sharpness window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Fractions of the epoch budget after which the learning rate is multiplied by 0.1.
    pub lr_decay_points: Vec<f64>,
    /// Use `η/√i` and `ρ/i^¼` instead of the piecewise decay.
    pub theorem_mode: bool,
    /// `[start, end)` fraction of epochs in which the sharpness step runs; SGD elsewhere.
    pub flad_window: (f64, f64),
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr_decay_points: vec![0.3, 0.6, 0.85],
            theorem_mode: false,
            flad_window: (0.0, 1.0),
        }
    }
}

pub const LR_DECAY_FACTOR: f64 = 0.1;

/// Schedule values for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub lr: f64,
    pub rho: f64,
    pub sharpness_active: bool,
}

impl Schedule {
    pub fn constant() -> Self {
        Self {
            lr_decay_points: Vec::new(),
            ..Self::default()
        }
    }

    pub fn theorem() -> Self {
        Self {
            theorem_mode: true,
            ..Self::constant()
        }
    }

    pub fn with_window(mut self, start: f64, end: f64) -> Self {
        self.flad_window = (start, end);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.flad_window;
        if !(0.0 <= start && start < end && end <= 1.0) {
            return Err(Error::validation(
                "schedule.flad_window",
                format!("need 0 <= start < end <= 1, got ({start}, {end})"),
            ));
        }
        if let Some(p) = self
            .lr_decay_points
            .iter()
            .find(|p| !(**p > 0.0 && **p <= 1.0))
        {
            return Err(Error::validation(
                "schedule.lr_decay_points",
                format!("decay points must lie in (0, 1], got {p}"),
            ));
        }
        Ok(())
    }

    /// Learning rate, radius and window flag for 1-based `epoch` of `total`.
    pub fn at(&self, epoch: usize, total: usize, lr: f64, rho: f64) -> ScheduleStep {
        debug_assert!(epoch >= 1 && epoch <= total);
        let i = epoch.max(1) as f64;
        let elapsed = (epoch.max(1) - 1) as f64 / total.max(1) as f64;
        let (lr, rho) = if self.theorem_mode {
            (lr / i.sqrt(), rho / i.sqrt().sqrt())
        } else {
            let decays = self
                .lr_decay_points
                .iter()
                .filter(|&&p| elapsed >= p)
                .count();
            (lr * LR_DECAY_FACTOR.powi(decays as i32), rho)
        };
        let (start, end) = self.flad_window;
        ScheduleStep {
            lr,
            rho,
            sharpness_active: elapsed >= start && elapsed < end,
        }
    }

    /// Number of epochs in `1..=total` whose sharpness flag is set.
    pub fn active_epochs(&self, total: usize) -> usize {
        (1..=total)
            .filter(|&e| self.at(e, total, 1.0, 1.0).sharpness_active)
            .count()
    }
}
