//! Adam with per-group learning-rate multipliers, the exponential learning
//! rate schedule, and a finite-difference gradient checker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named parameter buffer with its gradient.
pub struct ParamGroup<'a> {
    pub name: String,
    pub params: &'a mut [f32],
    pub grads: &'a [f64],
    pub lr_multiplier: f64,
}

impl<'a> ParamGroup<'a> {
    pub fn new(name: impl Into<String>, params: &'a mut [f32], grads: &'a [f64], lr_multiplier: f64) -> Result<Self> {
        let name = name.into();
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "group {name}: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        Ok(Self { name, params, grads, lr_multiplier })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    /// Learning rate of the basis matrix and decoder.
    pub lr: f64,
    /// Factor-grid learning rate as a multiple of `lr`.
    pub factor_lr_multiplier: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate after `total_steps`, as a fraction of the start.
    pub decay_ratio: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, factor_lr_multiplier: 20.0, beta1: 0.9, beta2: 0.99, eps: 1e-8, decay_ratio: 0.1 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.factor_lr_multiplier >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay_ratio > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// First and second moments per named group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    groups: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(cfg: &AdamConfig) -> Self {
        Self { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, groups: BTreeMap::new() }
    }

    /// Drops moments of groups whose name starts with `prefix`.
    pub fn reset(&mut self, prefix: &str) {
        self.groups.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn step_count(&self, group: &str) -> u64 {
        self.groups.get(group).map_or(0, |m| m.step)
    }

    pub fn moments(&self, group: &str) -> Option<(&[f64], &[f64])> {
        self.groups.get(group).map(|m| (&m.m[..], &m.v[..]))
    }
}

/// One bias-corrected Adam update of every group at `base_lr ×
/// multiplier`. All gradients are checked for finiteness before any
/// parameter changes.
pub fn adam_step(groups: &mut [ParamGroup<'_>], state: &mut AdamState, base_lr: f64) -> Result<()> {
    for g in groups.iter() {
        if let Some(index) = g.grads.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { group: g.name.clone(), index });
        }
    }
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for g in groups.iter_mut() {
        let mom = state.groups.entry(g.name.clone()).or_default();
        if mom.m.len() != g.params.len() {
            *mom = Moments { m: vec![0.0; g.params.len()], v: vec![0.0; g.params.len()], step: 0 };
        }
        mom.step += 1;
        let c1 = 1.0 - b1.powi(mom.step as i32);
        let c2 = 1.0 - b2.powi(mom.step as i32);
        let lr = base_lr * g.lr_multiplier;
        for (((p, &gr), m), v) in g.params.iter_mut().zip(g.grads).zip(&mut mom.m).zip(&mut mom.v) {
            *m = b1 * *m + (1.0 - b1) * gr;
            *v = b2 * *v + (1.0 - b2) * gr * gr;
            let upd = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *p = (*p as f64 - upd) as f32;
        }
    }
    Ok(())
}

/// `base_lr · ratio^(step / total_steps)`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, ratio: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    base_lr * ratio.powf(step as f64 / total_steps as f64)
}

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    /// Returns the loss and overwrites `grad` with its gradient.
    fn loss_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Relative error used by the checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `obj` at `params` over the indices in `which`
/// (all if `None`).
pub fn grad_check(obj: &dyn Objective, params: &[f64], eps: f64, floor: f64, which: Option<&[usize]>) -> GradCheck {
    let mut grad = vec![0.0; params.len()];
    obj.loss_and_grad(params, &mut grad);
    let all: Vec<usize> = (0..params.len()).collect();
    let idx = which.unwrap_or(&all);
    let mut scratch = vec![0.0; params.len()];
    let mut x = params.to_vec();
    let mut out = GradCheck { max_rel_error: 0.0, worst_index: None, checked: 0 };
    for &i in idx {
        x[i] = params[i] + eps;
        let fp = obj.loss_and_grad(&x, &mut scratch);
        x[i] = params[i] - eps;
        let fm = obj.loss_and_grad(&x, &mut scratch);
        x[i] = params[i];
        let fd = (fp - fm) / (2.0 * eps);
        let e = rel_error(fd, grad[i], floor);
        out.checked += 1;
        if e > out.max_rel_error || out.worst_index.is_none() {
            out.max_rel_error = out.max_rel_error.max(e);
            out.worst_index = Some(i);
        }
    }
    out
}
