//! SGD with momentum, weight decay and global-norm gradient clipping.

use std::collections::BTreeMap;

use pemp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

/// Momentum buffers keyed by parameter name, created on first update.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: SgdConfig,
    pub velocity: BTreeMap<String, Tensor>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm_preclip: f64,
    pub clipped: bool,
}

impl OptimState {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: BTreeMap::new(),
            step: 0,
        }
    }
}

pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm/g` when their global norm `g` exceeds `max_norm`.
///
/// Returns the pre-clip norm and whether scaling happened.
pub fn clip_gradients<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> (f64, bool) {
    let mut grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = global_norm(grads.iter().map(|g| &**g));
    if norm <= max_norm {
        return (norm, false);
    }
    let k = max_norm / norm;
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v *= k;
        }
    }
    (norm, true)
}

/// One step over the parameters named in `grads`; others are left alone.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn sgd_update(
    params: &mut ParamSet,
    mut grads: BTreeMap<String, Tensor>,
    state: &mut OptimState,
) -> Result<StepReport> {
    if grads.values().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    for (name, g) in &grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Checkpoint(format!("gradient shape mismatch for {name}")));
        }
    }
    let cfg = state.config;
    let (norm, clipped) = clip_gradients(grads.values_mut(), cfg.clip_norm);
    for (name, g) in grads {
        let p = params.get_mut(&name).expect("checked above");
        let v = state.velocity.entry(name).or_insert_with(|| Tensor::zeros(p.shape()));
        for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
            *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *pi;
            *pi -= cfg.lr * *vi;
        }
    }
    state.step += 1;
    Ok(StepReport {
        grad_norm_preclip: norm,
        clipped,
    })
}
