//! Adam optimizer state and update rule.

use super::{Result, TensorError};

/// Per-parameter first/second moment buffers plus the shared step counter.
///
/// The counter is incremented before bias correction, so the first call uses
/// t = 1.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for parameters with the given element counts, using the
    /// standard (0.9, 0.999, 1e-8) moment hyperparameters.
    pub fn new(lr: f64, param_lens: &[usize]) -> Self {
        Self::with_hyper(lr, 0.9, 0.999, 1e-8, param_lens)
    }

    pub fn with_hyper(lr: f64, beta1: f64, beta2: f64, eps: f64, param_lens: &[usize]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update over all parameters. `params` and `grads` must be
    /// aligned with the state, slot by slot.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::AdamShapeMismatch {
                params: params.len(),
                state: self.m.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(TensorError::AdamShapeMismatch {
                    params: p.len(),
                    state: m.len(),
                });
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
