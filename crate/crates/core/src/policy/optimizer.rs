use serde::{Deserialize, Serialize};

use super::params::PolicyParams;
use crate::error::{MasaError, Result};
use crate::types::{OptimizerKind, TrainConfig};

fn check(params: &PolicyParams, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != params.theta.len() {
        return Err(MasaError::Shape {
            expected: params.theta.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(MasaError::NonFiniteGradient(i));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(MasaError::Precondition(format!("learning rate {lr} must be finite and non-negative")));
    }
    Ok(())
}

/// Plain gradient descent: `theta <- theta - lr * grad`.
pub fn apply_gradient(params: &mut PolicyParams, grad: &[f64], lr: f64) -> Result<()> {
    check(params, grad, lr)?;
    for (t, g) in params.theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}

pub fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grad: &[f64], lr: f64) -> Result<()> {
        check(params, grad, lr)?;
        if self.m.len() != grad.len() {
            return Err(MasaError::Shape {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, &g) in grad.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let theta = &mut params.theta[i];
            *theta -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
        }
        Ok(())
    }
}

/// A pluggable update rule with optional global-norm clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd { grad_clip: Option<f64> },
    AdamW { state: AdamW, grad_clip: Option<f64> },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::Sgd { grad_clip: None }
    }

    pub fn from_config(cfg: &TrainConfig, len: usize) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                grad_clip: cfg.grad_clip,
            },
            OptimizerKind::AdamW => Optimizer::AdamW {
                state: AdamW::new(len, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay),
                grad_clip: cfg.grad_clip,
            },
        }
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &[f64], lr: f64) -> Result<f64> {
        check(params, grad, lr)?;
        let clip = match self {
            Optimizer::Sgd { grad_clip } | Optimizer::AdamW { grad_clip, .. } => *grad_clip,
        };
        let mut g = grad.to_vec();
        let norm = match clip {
            Some(max) => clip_grad_norm(&mut g, max),
            None => grad_norm(&g),
        };
        match self {
            Optimizer::Sgd { .. } => apply_gradient(params, &g, lr)?,
            Optimizer::AdamW { state, .. } => state.step(params, &g, lr)?,
        }
        Ok(norm)
    }
}
