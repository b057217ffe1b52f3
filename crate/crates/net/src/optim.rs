use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates `params[i]` with `grads[i]`. Moment buffers are sized on the
    /// first call and must keep matching afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[&Tensor<F>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(invalid(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::ZERO; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(invalid("parameter list changed between steps"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(invalid(format!("gradient {:?} does not match parameter {:?}", g.shape(), p.shape())));
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = F::from_f64(1.0 - c.lr * c.weight_decay);
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (lr, eps) = (F::from_f64(c.lr), F::from_f64(c.eps));
        let (ibc1, sbc2) = (F::from_f64(1.0 / bc1), F::from_f64(1.0 / bc2.sqrt()));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (F::ONE - b1) * gj;
                v[j] = b2 * v[j] + (F::ONE - b2) * gj * gj;
                let mhat = m[j] * ibc1;
                let denom = v[j].sqrt() * sbc2 + eps;
                *pj = *pj * decay - lr * mhat / denom;
            }
        }
        Ok(())
    }
}
