//! Bias-corrected Adam.

use crate::{Error, Result};

use super::ParamStore;

/// Per-parameter first/second moment estimates plus a step counter.
/// Moment buffers are aligned with the store's creation order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.params().iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: store.params().iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update from the gradients currently held by
    /// the store, then reset them to zero. A non-finite gradient rejects the
    /// whole step and leaves parameters, moments, and gradients untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for p in store.params() {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {:?} is not finite",
                    p.id
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (idx, p) in store.params_mut().iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let grads = p.grad.data();
            for k in 0..m.len() {
                let g = grads[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
            }
            let values = p.value.data_mut();
            for k in 0..m.len() {
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                values[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
