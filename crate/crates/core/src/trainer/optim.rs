//! AdamW with decoupled weight decay, warmup + cosine learning-rate schedule,
//! and global-norm gradient clipping.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

/// Anything exposing its trainable tensors as flat slices, in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        EncoderParams::tensors(self).to_vec()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        EncoderParams::tensors_mut(self).into_iter().collect()
    }
}

/// Linear warmup from 0 to `lr_max`, then half-cosine decay to 0 at
/// `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr_max * step as f64 / self.warmup_steps as f64;
        }
        let progress = if self.total_steps > self.warmup_steps {
            ((step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64).min(1.0)
        } else {
            1.0
        };
        self.lr_max * 0.5 * (1.0 + (PI * progress).cos())
    }
}

pub fn global_norm(grads: &[&mut [f64]]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: AdamWConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    /// Zeroed moments shaped like `shapes` (one length per tensor).
    pub fn new(shapes: &[usize], config: AdamWConfig) -> Self {
        Self {
            config,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[&[f64]]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&shapes, AdamWConfig::default())
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update:
/// `θ ← θ − lr·(m̂ / (√v̂ + ε) + weight_decay·θ)` with bias-corrected moments.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradient tensors, {} moment tensors",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: params {}, grads {}, moments {}",
                p.len(),
                g.len(),
                state.first_moment[i].len()
            )));
        }
    }
    state.step += 1;
    let AdamWConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[j]);
        }
    }
    Ok(())
}
