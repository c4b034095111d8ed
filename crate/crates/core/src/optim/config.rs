use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step size, perturbation radius, decomposition and base-optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Learning rate η.
    pub lr: f64,
    /// Perturbation radius ρ.
    pub rho: f64,
    /// Weight γ of the first-order term.
    pub gamma: f64,
    /// Decomposition coefficient σ.
    pub sigma: f64,
    /// EMA factor for the gradient tracker `m`.
    pub lambda0: f64,
    /// EMA factor for the gradient-norm-gradient tracker `n`.
    pub lambda1: f64,
    /// Guard added to every normalizing denominator.
    pub c: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 0.1,
            rho: 0.2,
            gamma: 0.2,
            sigma: 0.5,
            lambda0: 0.9,
            lambda1: 0.9,
            c: 1e-12,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl HyperParams {
    /// Plain gradient descent: no momentum, no decay, no perturbation.
    pub fn plain(lr: f64) -> Self {
        Self {
            lr,
            rho: 0.0,
            gamma: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
            ..Self::default()
        }
    }

    /// Range checks; `prefix` is prepended to field names in errors.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        let check = |ok: bool, name: &str, rule: &str, value: f64| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(
                    field(name),
                    format!("must be {rule}, got {value}"),
                ))
            }
        };
        check(self.lr > 0.0, "lr", "> 0", self.lr)?;
        check(self.rho >= 0.0, "rho", ">= 0", self.rho)?;
        check(self.gamma >= 0.0, "gamma", ">= 0", self.gamma)?;
        check(
            (0.0..=1.0).contains(&self.sigma),
            "sigma",
            "in [0, 1]",
            self.sigma,
        )?;
        check(
            self.lambda0 > 0.0 && self.lambda0 < 1.0,
            "lambda0",
            "in (0, 1)",
            self.lambda0,
        )?;
        check(
            self.lambda1 > 0.0 && self.lambda1 < 1.0,
            "lambda1",
            "in (0, 1)",
            self.lambda1,
        )?;
        check(self.c > 0.0, "c", "> 0", self.c)?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            "in [0, 1)",
            self.momentum,
        )?;
        check(
            self.weight_decay >= 0.0,
            "weight_decay",
            ">= 0",
            self.weight_decay,
        )?;
        Ok(())
    }
}

/// Which update rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    /// Zeroth-order sharpness, SAM-style.
    Zeroth,
    /// First-order sharpness, GAM-style; the update is the perturbed gradient-norm gradient.
    First,
    /// Undecomposed zeroth + γ · first (C-Flat-style).
    Combined,
    /// Both perturbations decomposed to their stochastic-noise components.
    #[default]
    Flad,
    /// Decomposed zeroth-order part alone.
    #[serde(rename = "flad-0th")]
    FladZeroth,
    /// Decomposed first-order part alone.
    #[serde(rename = "flad-1st")]
    FladFirst,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::Zeroth,
        OptimizerKind::First,
        OptimizerKind::Combined,
        OptimizerKind::Flad,
        OptimizerKind::FladZeroth,
        OptimizerKind::FladFirst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Zeroth => "zeroth",
            OptimizerKind::First => "first",
            OptimizerKind::Combined => "combined",
            OptimizerKind::Flad => "flad",
            OptimizerKind::FladZeroth => "flad-0th",
            OptimizerKind::FladFirst => "flad-1st",
        }
    }

    pub fn uses_zeroth(self) -> bool {
        matches!(
            self,
            OptimizerKind::Zeroth
                | OptimizerKind::Combined
                | OptimizerKind::Flad
                | OptimizerKind::FladZeroth
        )
    }

    pub fn uses_first(self) -> bool {
        matches!(
            self,
            OptimizerKind::First
                | OptimizerKind::Combined
                | OptimizerKind::Flad
                | OptimizerKind::FladFirst
        )
    }

    /// Kinds whose perturbations subtract the EMA trackers.
    pub fn is_decomposed(self) -> bool {
        matches!(
            self,
            OptimizerKind::Flad | OptimizerKind::FladZeroth | OptimizerKind::FladFirst
        )
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation("optimizer.kind", format!("unknown optimizer `{s}`")))
    }
}

/// Direction used for the first-order perturbation δ1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationVariant {
    /// The current batch's gradient-norm gradient `s`.
    #[default]
    Standard,
    /// The previous batch's `s`.
    PreBatch,
    /// An isotropic Gaussian draw.
    Random,
    /// The tracked full-gradient component `σ · n`.
    FullComponent,
    /// The stochastic-noise component `s − σ · n`.
    NoiseComponent,
}

impl PerturbationVariant {
    pub const ALL: [PerturbationVariant; 5] = [
        PerturbationVariant::Standard,
        PerturbationVariant::PreBatch,
        PerturbationVariant::Random,
        PerturbationVariant::FullComponent,
        PerturbationVariant::NoiseComponent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationVariant::Standard => "standard",
            PerturbationVariant::PreBatch => "pre-batch",
            PerturbationVariant::Random => "random",
            PerturbationVariant::FullComponent => "full-component",
            PerturbationVariant::NoiseComponent => "noise-component",
        }
    }
}

impl fmt::Display for PerturbationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind, first-order variant and hyperparameters of one optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub variant: PerturbationVariant,
    pub hp: HyperParams,
}

impl OptimizerConfig {
    /// Config with the variant implied by `kind`.
    pub fn new(kind: OptimizerKind, hp: HyperParams) -> Self {
        Self {
            kind,
            variant: Self::implied_variant(kind),
            hp,
        }
    }

    pub fn implied_variant(kind: OptimizerKind) -> PerturbationVariant {
        match kind {
            OptimizerKind::Flad | OptimizerKind::FladFirst => PerturbationVariant::NoiseComponent,
            _ => PerturbationVariant::Standard,
        }
    }

    pub fn with_variant(mut self, variant: PerturbationVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate("optimizer.")?;
        let needs_noise = matches!(self.kind, OptimizerKind::Flad | OptimizerKind::FladFirst);
        if needs_noise && self.variant != PerturbationVariant::NoiseComponent {
            return Err(Error::validation(
                "optimizer.variant",
                format!(
                    "{} requires the noise-component variant, got {}",
                    self.kind, self.variant
                ),
            ));
        }
        if !self.kind.uses_first() && self.variant != PerturbationVariant::Standard {
            return Err(Error::validation(
                "optimizer.variant",
                format!("{} has no first-order perturbation to vary", self.kind),
            ));
        }
        Ok(())
    }
}
