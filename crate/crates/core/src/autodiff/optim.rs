use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{ensure, Result};

/// Adam with decoupled weight decay.
///
/// Each step first shrinks the weights by `1 - lr * weight_decay`, then
/// applies the bias-corrected Adam update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, weight_decay)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        ensure!(
            grads.len() == params.len(),
            Contract,
            "adamw: {} gradients for {} parameters",
            grads.len(),
            params.len()
        );
        for (i, g) in grads.iter().enumerate() {
            ensure!(
                g.shape() == params.shape(i),
                Contract,
                "adamw: gradient shape {:?} vs parameter {} shape {:?}",
                g.shape(),
                params.name(i),
                params.shape(i)
            );
        }
        if self.first_moment.is_empty() {
            self.first_moment = (0..params.len()).map(|i| vec![0.0; params.data(i).len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        ensure!(
            self.first_moment.len() == params.len(),
            Contract,
            "adamw state built for {} tensors, got {}",
            self.first_moment.len(),
            params.len()
        );

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let shrink = 1.0 - self.lr * self.weight_decay;

        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let w = params.data_mut(i);
            for k in 0..w.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                w[k] = w[k] * shrink - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
