//! SGD with heavy-ball momentum, cosine learning-rate decay and KL annealing.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `base_lr · (1 + cos(π t / T)) / 2`.
pub fn cosine_lr(base_lr: f64, t: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::param("cosine schedule needs at least one step"));
    }
    if t > total_steps {
        return Err(Error::param(format!("schedule step {t} beyond total {total_steps}")));
    }
    let frac = t as f64 / total_steps as f64;
    Ok(base_lr * (1.0 + (PI * frac).cos()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlAnneal {
    None,
    #[default]
    Linear,
}

/// KL weight at optimizer step `t` of `total_steps`. Linear mode reaches
/// exactly 1 on the last step.
pub fn anneal_beta(t: usize, total_steps: usize, mode: KlAnneal) -> f64 {
    match mode {
        KlAnneal::None => 1.0,
        KlAnneal::Linear => {
            if total_steps == 0 {
                1.0
            } else {
                ((t + 1) as f64 / total_steps as f64).min(1.0)
            }
        }
    }
}

/// Velocity buffers for a fixed set of flat parameter blocks.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    step: usize,
    total_steps: usize,
}

impl SgdState {
    pub fn new(block_sizes: &[usize], momentum: f64, total_steps: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(Self {
            velocity: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            momentum,
            step: 0,
            total_steps,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// `v ← μ v + g; p ← p − lr v` for every block.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} blocks, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::shape(format!(
                    "block of size {} got {} params and {} grads",
                    v.len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.step >= self.total_steps {
            return Err(Error::param(format!(
                "optimizer already took all {} steps",
                self.total_steps
            )));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.step += 1;
        Ok(())
    }
}
