//! One iteration of each optimizer in the family.
//!
//! Every step function increments `state.t` first, so inside a step `t` is
//! the 1-based index of the iteration being taken.

use std::time::Instant;

use rand::Rng;

use super::adamw::{adamw_step, AdamWConfig, GradStash, OptimizerState};
use super::perturb::{sam_perturb, SamConfig};
use super::selector::LayerSelector;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayeredVector};
use crate::metrics::StepTelemetry;
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepConfig {
    pub adamw: AdamWConfig,
    pub sam: SamConfig,
}

fn telemetry(step: u64, loss: f64, grad_l1: f64, active: &ActiveSet, sizes: &[usize], passes: u8) -> StepTelemetry {
    StepTelemetry {
        step,
        loss,
        grad_l1,
        active_layers: active.clone(),
        active_param_count: active.param_count(sizes),
        grad_passes: passes,
        selection_params: 0,
        layer_norms: Vec::new(),
        staleness: Vec::new(),
        redraws: 0,
        probe_grad_l1: None,
        wall_ns: 0,
    }
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

fn perturbed(x: &LayeredVector, eps: &LayeredVector, active: &ActiveSet) -> Result<LayeredVector> {
    let mut xp = x.clone();
    xp.masked_axpy(1.0, eps, active)?;
    Ok(xp)
}

/// Plain AdamW on all layers: one dense pass.
pub fn adamw_train_step(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    state.t += 1;
    let full = ActiveSet::full(x.num_layers());
    let (loss, g) = obj.loss_and_grad(x, batch, &full)?;
    adamw_step(state, x, &g.values, &full, cfg)?;
    let mut tel = telemetry(state.t, loss, g.l1_norm(), &full, &x.layer_sizes(), 1);
    tel.layer_norms = g.layer_norms();
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// Two-pass SAM restricted to `active`: ascent gradient `r` at `x`,
/// perturbation from `r`, descent gradient at `x + ε` on the same batch,
/// AdamW on `active`. The reported norms are those of `r`.
pub fn two_pass_step(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    active: &ActiveSet,
    cfg: &StepConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    state.t += 1;
    let (loss, r) = obj.loss_and_grad(x, batch, active)?;
    let eps = sam_perturb(&r.values, active, &cfg.sam);
    let g = obj.grad(&perturbed(x, &eps, active)?, batch, active)?;
    adamw_step(state, x, &g.values, active, &cfg.adamw)?;
    let mut tel = telemetry(state.t, loss, r.l1_norm(), active, &x.layer_sizes(), 2);
    tel.layer_norms = r.layer_norms();
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// Dense two-step SAM with an AdamW base.
pub fn adasam_step(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    cfg: &StepConfig,
) -> Result<StepTelemetry> {
    let full = ActiveSet::full(x.num_layers());
    two_pass_step(obj, x, batch, state, &full, cfg)
}

/// Sparse-layer SAM: choose `S_t`, run the two-pass step on it, then feed the
/// ascent-gradient norms back to the selector.
pub fn slsam_step<R: Rng + ?Sized>(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    selector: &mut LayerSelector,
    rng: &mut R,
    cfg: &StepConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    let sel = selector.select(obj, x, batch, rng)?;
    let mut tel = two_pass_step(obj, x, batch, state, &sel.active, cfg)?;
    selector.observe(&sel.active, &tel.layer_norms)?;
    tel.redraws = sel.redraws;
    tel.selection_params = sel.cost;
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// AdamW on a selected subset of layers with no perturbation; the selector
/// sees the norms of the (only) gradient.
pub fn masked_adamw_step<R: Rng + ?Sized>(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    selector: &mut LayerSelector,
    rng: &mut R,
    cfg: &AdamWConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    let sel = selector.select(obj, x, batch, rng)?;
    state.t += 1;
    let (loss, g) = obj.loss_and_grad(x, batch, &sel.active)?;
    adamw_step(state, x, &g.values, &sel.active, cfg)?;
    let norms = g.layer_norms();
    selector.observe(&sel.active, &norms)?;
    let mut tel = telemetry(state.t, loss, g.l1_norm(), &sel.active, &x.layer_sizes(), 1);
    tel.layer_norms = norms;
    tel.redraws = sel.redraws;
    tel.selection_params = sel.cost;
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// First iteration of the single-step variants: dense AdamW, with every
/// layer's gradient stashed.
fn bootstrap_step(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
    start: Instant,
) -> Result<StepTelemetry> {
    let full = ActiveSet::full(x.num_layers());
    let sizes = x.layer_sizes();
    state.t += 1;
    let (loss, g) = obj.loss_and_grad(x, batch, &full)?;
    adamw_step(state, x, &g.values, &full, cfg)?;
    let mut stash = GradStash::new(&sizes);
    stash.store(&g.values, &full, state.t);
    state.prev_grad = Some(stash);
    let mut tel = telemetry(state.t, loss, g.l1_norm(), &full, &sizes, 1);
    tel.layer_norms = g.layer_norms();
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// Single-step SAM: the perturbation reuses the previous iteration's
/// gradient, so each step costs one dense pass. Step 1 is plain AdamW.
pub fn s2sam_step(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    cfg: &StepConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    let full = ActiveSet::full(x.num_layers());
    let sizes = x.layer_sizes();
    let Some(mut stash) = state.prev_grad.take() else {
        return bootstrap_step(obj, x, batch, state, &cfg.adamw, start);
    };
    state.t += 1;
    let loss = obj.loss(x, batch)?;
    let eps = sam_perturb(stash.grads(), &full, &cfg.sam);
    let g = obj.grad(&perturbed(x, &eps, &full)?, batch, &full)?;
    adamw_step(state, x, &g.values, &full, &cfg.adamw)?;
    stash.store(&g.values, &full, state.t);
    state.prev_grad = Some(stash);
    let mut tel = telemetry(state.t, loss, g.l1_norm(), &full, &sizes, 1);
    tel.layer_norms = g.layer_norms();
    tel.staleness = (0..sizes.len()).map(|l| (l, 1)).collect();
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}

/// Sparse-layer single-step SAM. Step 1 is dense AdamW on every layer and
/// fills the stash; afterwards each sampled layer is perturbed along its
/// most recently stashed gradient, updated from one sparse pass, and
/// re-stashed. The selector sees the norms of the new gradients.
pub fn sl_s2sam_step<R: Rng + ?Sized>(
    obj: &dyn Objective,
    x: &mut LayeredVector,
    batch: &Batch,
    state: &mut OptimizerState,
    selector: &mut LayerSelector,
    rng: &mut R,
    cfg: &StepConfig,
) -> Result<StepTelemetry> {
    let start = Instant::now();
    let sizes = x.layer_sizes();
    let Some(mut stash) = state.prev_grad.take() else {
        return bootstrap_step(obj, x, batch, state, &cfg.adamw, start);
    };
    let sel = selector.select(obj, x, batch, rng)?;
    let active = &sel.active;
    state.t += 1;
    let t = state.t;
    let mut staleness = Vec::with_capacity(active.len());
    for l in active.iter() {
        staleness.push((l, stash.staleness(l, t).ok_or(Error::MissingStash(l))?));
    }
    let loss = obj.loss(x, batch)?;
    let eps = sam_perturb(stash.grads(), active, &cfg.sam);
    let g = obj.grad(&perturbed(x, &eps, active)?, batch, active)?;
    adamw_step(state, x, &g.values, active, &cfg.adamw)?;
    stash.store(&g.values, active, t);
    state.prev_grad = Some(stash);
    let norms = g.layer_norms();
    selector.observe(active, &norms)?;
    let mut tel = telemetry(t, loss, g.l1_norm(), active, &sizes, 1);
    tel.layer_norms = norms;
    tel.staleness = staleness;
    tel.redraws = sel.redraws;
    tel.selection_params = sel.cost;
    tel.wall_ns = elapsed_ns(start);
    Ok(tel)
}
