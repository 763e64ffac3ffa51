//! Adam optimizer with bias correction, one state entry per parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Layer, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(lr: f64, like: &Mlp) -> Adam {
        let zeros: Vec<Layer> = like
            .layers()
            .iter()
            .map(|l| Layer { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam step in place.
    pub fn update(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.m.len() {
            return Err(Error::config("optimizer state does not match network"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..self.m.len() {
            if grads.layers[l].w.len() != self.m[l].w.len()
                || grads.layers[l].b.len() != self.m[l].b.len()
            {
                return Err(Error::config("gradient shape does not match optimizer state"));
            }
            let layer = &mut params.layers_mut()[l];
            apply(
                &mut layer.w,
                &grads.layers[l].w,
                &mut self.m[l].w,
                &mut self.v[l].w,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            apply(
                &mut layer.b,
                &grads.layers[l].b,
                &mut self.m[l].b,
                &mut self.v[l].b,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }

    /// Shape/finiteness check after deserialization.
    pub fn validate(&self, like: &Mlp) -> Result<()> {
        if self.m.len() != like.layers().len() || self.v.len() != like.layers().len() {
            return Err(Error::checkpoint("optimizer layer count mismatch"));
        }
        for ((m, v), l) in self.m.iter().zip(&self.v).zip(like.layers()) {
            if m.w.len() != l.w.len()
                || m.b.len() != l.b.len()
                || v.w.len() != l.w.len()
                || v.b.len() != l.b.len()
            {
                return Err(Error::checkpoint("optimizer state shape mismatch"));
            }
            if m.w.iter().chain(&m.b).chain(&v.w).chain(&v.b).any(|x| !x.is_finite()) {
                return Err(Error::checkpoint("non-finite optimizer state"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::checkpoint("bad learning rate"));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn apply(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
