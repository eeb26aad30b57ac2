//! Adam with bias correction, and a linear-warmup + cosine-annealing
//! learning-rate schedule evaluated per optimizer step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub start_lr: f64,
    pub final_lr: f64,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub steps_per_epoch: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > 0 && self.warmup_epochs >= self.total_epochs {
            return Err(Error::config(
                "warmup_epochs",
                format!(
                    "must be below total epochs ({} >= {})",
                    self.warmup_epochs, self.total_epochs
                ),
            ));
        }
        if !(self.final_lr <= self.start_lr) || self.final_lr < 0.0 {
            return Err(Error::config(
                "final_lr",
                format!("need 0 <= final_lr <= start_lr, got {} and {}", self.final_lr, self.start_lr),
            ));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::config("steps_per_epoch", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }
}

/// Learning rate at `global_step`: a linear ramp from 0 reaching `start_lr`
/// at the end of warmup, then cosine decay to `final_lr` at the last step.
pub fn lr_at(cfg: &ScheduleConfig, global_step: usize) -> Result<f64> {
    cfg.validate()?;
    let total = cfg.total_steps();
    if global_step >= total {
        return Err(Error::InvalidArgument(format!(
            "step {global_step} outside schedule of {total} steps"
        )));
    }
    let warmup = cfg.warmup_steps();
    if global_step < warmup {
        return Ok(cfg.start_lr * global_step as f64 / warmup as f64);
    }
    let span = total - 1 - warmup;
    let progress = if span == 0 {
        0.0
    } else {
        (global_step - warmup) as f64 / span as f64
    };
    Ok(cfg.final_lr + 0.5 * (cfg.start_lr - cfg.final_lr) * (1.0 + (PI * progress).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    state: AdamState,
}

impl Adam {
    /// Registers `params`; later steps must pass the same list in the same order.
    pub fn new(params: &[&Tensor], cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: AdamState {
                m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
                v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
                t: 0,
                shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn num_params(&self) -> usize {
        self.state.shapes.len()
    }

    /// Applies one bias-corrected update in place. Parameters without a
    /// gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if params.len() != self.state.shapes.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameters registered, {} given", self.state.shapes.len(), params.len()),
            ));
        }
        for (p, shape) in params.iter().zip(&self.state.shapes) {
            if p.shape() != &shape[..] {
                return Err(Error::shape("adam_step", format!("{:?} vs {shape:?}", p.shape())));
            }
            if p.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.state.t += 1;
        let t = self.state.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
