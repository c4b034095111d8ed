//! Perturbation primitives and the shared two-perturbation update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{HyperParams, OptimizerConfig, OptimizerKind, PerturbationVariant};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::oracle::Objective;
use crate::param::{Layout, ParamVector};
use crate::seed::{self, Stream};

/// Mutable per-task optimizer state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// EMA of minibatch gradients.
    pub m: ParamVector,
    /// EMA of minibatch gradient-norm gradients.
    pub n: ParamVector,
    pub velocity: ParamVector,
    /// Steps taken in the current task.
    pub step: u64,
    pub epoch_in_task: usize,
    /// Previous batch's gradient-norm gradient, for the pre-batch variant.
    prev_first: Option<ParamVector>,
    rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new(layout: &Layout, seed: u64) -> Self {
        Self {
            m: ParamVector::zeros(layout),
            n: ParamVector::zeros(layout),
            velocity: ParamVector::zeros(layout),
            step: 0,
            epoch_in_task: 0,
            prev_first: None,
            rng: seed::rng(seed, Stream::Perturbation, 0),
        }
    }

    /// Fresh trackers for a new task, keeping the perturbation RNG stream going.
    pub fn reset_for_task(&mut self, layout: &Layout) {
        self.m = ParamVector::zeros(layout);
        self.n = ParamVector::zeros(layout);
        self.velocity = ParamVector::zeros(layout);
        self.step = 0;
        self.epoch_in_task = 0;
        self.prev_first = None;
    }
}

/// What a step did, for logging and contract checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Minibatch loss at the pre-step parameters.
    pub loss: f64,
    pub delta0_norm: f64,
    pub delta1_norm: f64,
    /// True if a sharpness-aware update ran.
    pub sharpness: bool,
    /// Both perturbation directions vanished and the step fell back to SGD.
    pub degenerate: bool,
}

/// `δ0 = ρ · g / (‖g‖ + c)`
pub fn zeroth_perturbation(g_noise: &ParamVector, rho: f64, c: f64) -> ParamVector {
    if rho == 0.0 {
        return ParamVector::zeros(g_noise.layout());
    }
    g_noise.scaled_direction(rho, c)
}

/// Stochastic-noise component `g − σ · tracker`.
pub fn decompose(g_batch: &ParamVector, tracker: &ParamVector, sigma: f64) -> Result<ParamVector> {
    g_batch.check_len(tracker, "decompose")?;
    if sigma == 0.0 {
        return Ok(g_batch.clone());
    }
    Ok(g_batch.axpy(-sigma, tracker))
}

/// `λ · tracker + (1 − λ) · g`
pub fn update_ema(tracker: &ParamVector, g_new: &ParamVector, lambda: f64) -> Result<ParamVector> {
    tracker.check_len(g_new, "update_ema")?;
    Ok(tracker.with_values(
        tracker
            .as_slice()
            .iter()
            .zip(g_new.as_slice())
            .map(|(t, g)| lambda * t + (1.0 - lambda) * g)
            .collect(),
    ))
}

/// Inputs a first-order perturbation variant may read.
pub struct PerturbationContext<'a> {
    /// Current batch's gradient-norm gradient.
    pub s: &'a ParamVector,
    /// EMA tracker `n` (already updated with `s`).
    pub tracker: &'a ParamVector,
    pub sigma: f64,
    /// Previous batch's `s`, if any.
    pub previous: Option<&'a ParamVector>,
    pub rng: &'a mut ChaCha8Rng,
}

/// Direction of δ1 before ρ-scaling.
///
/// `PreBatch` without a previous batch falls back to `Standard`.
pub fn variant_perturbation(
    variant: PerturbationVariant,
    ctx: PerturbationContext<'_>,
) -> Result<ParamVector> {
    match variant {
        PerturbationVariant::Standard => Ok(ctx.s.clone()),
        PerturbationVariant::PreBatch => Ok(ctx.previous.unwrap_or(ctx.s).clone()),
        PerturbationVariant::Random => {
            let draw: Vec<f64> = (0..ctx.s.len())
                .map(|_| ctx.rng.sample(StandardNormal))
                .collect();
            Ok(ctx.s.with_values(draw).normalized(0.0))
        }
        PerturbationVariant::FullComponent => {
            ctx.s.check_len(ctx.tracker, "variant_perturbation")?;
            Ok(ctx.tracker.scale(ctx.sigma))
        }
        PerturbationVariant::NoiseComponent => decompose(ctx.s, ctx.tracker, ctx.sigma),
    }
}

fn finite(v: ParamVector, quantity: &'static str) -> Result<ParamVector> {
    v.ensure_finite(quantity)?;
    Ok(v)
}

/// Weight decay, momentum and the parameter update shared by every kind.
fn apply_update(
    w: &ParamVector,
    mut d: ParamVector,
    state: &mut OptimizerState,
    hp: &HyperParams,
) -> Result<ParamVector> {
    if hp.weight_decay != 0.0 {
        d.axpy_mut(hp.weight_decay, w);
    }
    state.velocity = if hp.momentum == 0.0 {
        d
    } else {
        let mut v = state.velocity.scale(hp.momentum);
        v.axpy_mut(1.0, &d);
        v
    };
    let next = w.axpy(-hp.lr, &state.velocity);
    state.step += 1;
    finite(next, "updated parameters")
}

/// Plain (momentum) SGD step.
pub fn sgd_step<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    state: &mut OptimizerState,
    hp: &HyperParams,
) -> Result<(ParamVector, StepReport)> {
    let (loss, g) = oracle.loss_and_grad(w, batch)?;
    check_loss(loss)?;
    let g = finite(g, "batch gradient")?;
    let next = apply_update(w, g, state, hp)?;
    Ok((
        next,
        StepReport {
            loss,
            ..StepReport::default()
        },
    ))
}

fn check_loss(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            quantity: "loss",
            index: 0,
            value: loss,
        })
    }
}

/// Which parts of the two-perturbation update run, and how they are decomposed.
struct Plan {
    zeroth_sigma: Option<f64>,
    first: Option<(PerturbationVariant, f64)>,
    /// Include g0 in the update direction.
    use_g0: bool,
    first_weight: f64,
}

fn plan(config: &OptimizerConfig) -> Plan {
    let hp = &config.hp;
    let sigma = hp.sigma;
    match config.kind {
        OptimizerKind::Sgd => Plan {
            zeroth_sigma: None,
            first: None,
            use_g0: false,
            first_weight: 0.0,
        },
        OptimizerKind::Zeroth | OptimizerKind::FladZeroth => Plan {
            zeroth_sigma: Some(if config.kind == OptimizerKind::Zeroth {
                0.0
            } else {
                sigma
            }),
            first: None,
            use_g0: true,
            first_weight: 0.0,
        },
        OptimizerKind::First | OptimizerKind::FladFirst => Plan {
            zeroth_sigma: None,
            first: Some((config.variant, sigma)),
            use_g0: false,
            first_weight: 1.0,
        },
        OptimizerKind::Combined | OptimizerKind::Flad => {
            let zeroth = if config.kind == OptimizerKind::Combined {
                0.0
            } else {
                sigma
            };
            Plan {
                zeroth_sigma: Some(zeroth),
                // γ = 0 removes the first-order part entirely.
                first: (hp.gamma != 0.0).then_some((config.variant, sigma)),
                use_g0: true,
                first_weight: hp.gamma,
            }
        }
    }
}

/// One update of any optimizer kind.
///
/// For FLAD this runs, in order: batch gradient `ĝ`, tracker `m`, δ0 from
/// `ĝ − σm`, `g0 = ∇L(w + δ0)`, `s = H(w)·ĝ/(‖ĝ‖+c)`, tracker `n`, δ1 from
/// `s − σn`, `g1 = H(w+δ1)·∇L(w+δ1)/(‖∇L(w+δ1)‖+c)`, then `w − η(g0 + γ g1)`
/// through weight decay and momentum. That is two gradient and two
/// Hessian-vector evaluations.
pub fn step<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<(ParamVector, StepReport)> {
    let hp = &config.hp;
    let plan = plan(config);
    if plan.zeroth_sigma.is_none() && plan.first.is_none() {
        return sgd_step(oracle, w, batch, state, hp);
    }

    let (loss, g_hat) = oracle.loss_and_grad(w, batch)?;
    check_loss(loss)?;
    let g_hat = finite(g_hat, "batch gradient")?;
    let mut report = StepReport {
        loss,
        sharpness: true,
        ..StepReport::default()
    };

    let mut dir_zero_flags = Vec::with_capacity(2);

    let g0 = match plan.zeroth_sigma {
        Some(sigma) => {
            state.m = update_ema(&state.m, &g_hat, hp.lambda0)?;
            let direction = decompose(&g_hat, &state.m, sigma)?;
            dir_zero_flags.push(direction.is_zero());
            let delta0 = zeroth_perturbation(&direction, hp.rho, hp.c);
            report.delta0_norm = delta0.norm();
            let g0 = if delta0.is_zero() {
                g_hat.clone()
            } else {
                oracle.grad(&w.add(&delta0), batch)?
            };
            Some(finite(g0, "perturbed gradient g0")?)
        }
        None => None,
    };

    let g1 = match plan.first {
        Some((variant, sigma)) => {
            let s = oracle.hvp(w, batch, &g_hat.normalized(hp.c))?;
            let s = finite(s, "gradient-norm gradient")?;
            state.n = update_ema(&state.n, &s, hp.lambda1)?;
            let direction = variant_perturbation(
                variant,
                PerturbationContext {
                    s: &s,
                    tracker: &state.n,
                    sigma,
                    previous: state.prev_first.as_ref(),
                    rng: &mut state.rng,
                },
            )?;
            dir_zero_flags.push(direction.is_zero());
            let delta1 = zeroth_perturbation(&direction, hp.rho, hp.c);
            report.delta1_norm = delta1.norm();
            let g1 = if delta1.is_zero() {
                s.clone()
            } else {
                oracle.grad_norm_grad(&w.add(&delta1), batch, hp.c)?.value
            };
            state.prev_first = Some(s);
            Some(finite(g1, "perturbed gradient-norm gradient g1")?)
        }
        None => None,
    };

    let d = if dir_zero_flags.iter().all(|&z| z) {
        report.degenerate = true;
        g_hat
    } else {
        match (g0, g1) {
            (Some(g0), Some(g1)) if plan.use_g0 => g0.axpy(plan.first_weight, &g1),
            (Some(g0), None) => g0,
            (None, Some(g1)) => g1,
            _ => unreachable!("plan always includes a perturbation"),
        }
    };

    let next = apply_update(w, d, state, hp)?;
    Ok((next, report))
}

/// FLAD update; `hp` supplies every coefficient.
pub fn flad_step<O: Objective + ?Sized>(
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    state: &mut OptimizerState,
    hp: &HyperParams,
) -> Result<(ParamVector, StepReport)> {
    step(
        oracle,
        w,
        batch,
        state,
        &OptimizerConfig::new(OptimizerKind::Flad, *hp),
    )
}

/// Any non-FLAD kind.
pub fn baseline_step<O: Objective + ?Sized>(
    kind: OptimizerKind,
    variant: PerturbationVariant,
    oracle: &O,
    w: &ParamVector,
    batch: &Batch,
    state: &mut OptimizerState,
    hp: &HyperParams,
) -> Result<(ParamVector, StepReport)> {
    if kind == OptimizerKind::Flad {
        return Err(Error::InvalidArgument(
            "use flad_step for the flad kind".into(),
        ));
    }
    let config = OptimizerConfig {
        kind,
        variant,
        hp: *hp,
    };
    step(oracle, w, batch, state, &config)
}
