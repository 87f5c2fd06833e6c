use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear learning-rate warm-up over this many steps (0 disables it).
    pub warmup_steps: usize,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64, warmup_steps: usize) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps,
        }
    }
}

/// Adam with bias correction and decoupled weight decay. Moment tensors
/// are kept in the same order as the parameter list handed to `new`.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: usize,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            cfg,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn effective_lr(&self) -> f64 {
        if self.cfg.warmup_steps > 0 && self.step < self.cfg.warmup_steps {
            self.cfg.lr * (self.step as f64 + 1.0) / self.cfg.warmup_steps as f64
        } else {
            self.cfg.lr
        }
    }

    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.first.len(), "optimizer/parameter count");
        assert_eq!(params.len(), grads.len(), "gradient count");
        let lr_t = {
            // warm-up is evaluated on the step being taken
            let next = self.step + 1;
            if self.cfg.warmup_steps > 0 && next <= self.cfg.warmup_steps {
                self.cfg.lr * next as f64 / self.cfg.warmup_steps as f64
            } else {
                self.cfg.lr
            }
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape(), "adam shape");
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data().iter())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * gv;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr_t * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *pv);
            }
        }
    }
}
