//! Cyclical annealing schedule, learning-rate warm-up, and Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{ModelParams, ParamGrads};
use crate::{Error, Result};

/// Cyclical annealing cycle: ramp fraction R and cycle length G.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealConfig {
    r: f64,
    g: u64,
}

impl AnnealConfig {
    pub fn new(r: f64, g: u64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "annealing ramp fraction must be in (0, 1], got {r}"
            )));
        }
        if g == 0 {
            return Err(Error::InvalidConfig(
                "annealing cycle length must be at least 1".into(),
            ));
        }
        Ok(Self { r, g })
    }

    pub fn ramp_fraction(&self) -> f64 {
        self.r
    }

    pub fn cycle_length(&self) -> u64 {
        self.g
    }
}

/// Coefficient for the self-distillation term at iteration `t` (1-based):
/// with r = (t-1) mod G, the ramp r/(R*G) while r <= R*G, then 1 until the
/// cycle restarts. Both branches agree at the boundary.
pub fn annealing_coefficient(t: u64, cfg: &AnnealConfig) -> f64 {
    assert!(t >= 1, "iterations are 1-based");
    let r = ((t - 1) % cfg.g) as f64;
    let ramp_len = cfg.r * cfg.g as f64;
    if r <= ramp_len {
        r / ramp_len
    } else {
        1.0
    }
}

/// Linear warm-up to `peak_lr` over `warmup_steps`, constant afterwards.
pub fn warmup_lr(t: u64, peak_lr: f64, warmup_steps: u64) -> f64 {
    assert!(t >= 1, "steps are 1-based");
    assert!(warmup_steps >= 1, "warm-up must span at least one step");
    let frac = (t as f64 / warmup_steps as f64).min(1.0);
    frac * peak_lr
}

/// Adam moment decay rates and denominator epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        for (name, beta) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be in [0, 1), got {beta}"
                )));
            }
        }
        Ok(Self {
            beta1,
            beta2,
            eps: 1e-8,
        })
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter, flat in the
/// [`ModelParams::flatten`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    state: &mut OptimState,
    params: &mut ModelParams,
    grads: &ParamGrads,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let mut flat = params.flatten();
    let g = grads.flatten();
    if g.len() != flat.len() || state.m.len() != flat.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "params {} / grads {} / moments {}",
            flat.len(),
            g.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - libm::pow(cfg.beta1, state.t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, state.t as f64);
    for i in 0..flat.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        flat[i] -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    params.assign_from_flat(&flat)
}
