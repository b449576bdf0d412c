//! Bias-corrected Adam over flat lists of tensors. Deterministic: the
//! update visits parameters in their canonical order and does no
//! reduction whose result depends on scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One update. `grads[i]` may be `None` for parameters untouched by
    /// the batch; their moments still decay.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params, {} grads, state holds {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if let Some(g) = grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::InvalidArgument(format!(
                        "adam: param {i} shape {:?} vs grad {:?}",
                        p.shape(),
                        g.shape()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            let zero = vec![0.0; p.len()];
            let g: &[f64] = match grads[i] {
                Some(g) => g.data(),
                None => &zero,
            };
            for j in 0..p.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
