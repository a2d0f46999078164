//! Adam optimizer (Kingma & Ba, 2015) with bias-corrected moment estimates.

use super::{NumericsError, Result, Tensor};
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters. Defaults are the standard Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state: step counter plus first/second moment estimates per parameter.
///
/// Parameters are identified by the index order in which they are presented;
/// callers must keep that order stable across steps (the model's parameter
/// visitor guarantees this).
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of completed optimization steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Begins a new optimization step; every parameter update in the step
    /// shares the same bias-correction exponent.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the Adam update to one parameter slot.
    ///
    /// Moment buffers are allocated lazily on first touch and must keep the
    /// parameter's shape thereafter.
    pub fn update(&mut self, slot: usize, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_update",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if self.step == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "adam_update",
                msg: "call begin_step before update".into(),
            });
        }
        while self.m.len() <= slot {
            self.m.push(Tensor::zeros(&[0]));
            self.v.push(Tensor::zeros(&[0]));
        }
        if self.m[slot].shape() != param.shape() {
            if self.m[slot].numel() != 0 {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_update",
                    lhs: self.m[slot].shape().to_vec(),
                    rhs: param.shape().to_vec(),
                });
            }
            self.m[slot] = Tensor::zeros(param.shape());
            self.v[slot] = Tensor::zeros(param.shape());
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let m = self.m[slot].data_mut();
        let v = self.v[slot].data_mut();
        let p = param.data_mut();
        for ((pi, mi), (vi, gi)) in p
            .iter_mut()
            .zip(m.iter_mut())
            .zip(v.iter_mut().zip(grad.data()))
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
