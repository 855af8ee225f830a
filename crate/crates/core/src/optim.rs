//! Adadelta.
//!
//! Per element, with decay `rho`, offset `eps` and gradient `d`:
//!
//! ```text
//! g_t   = (1 - rho) * d^2 + rho * g_{t-1}
//! delta = -lr * sqrt(s_{t-1} + eps) / sqrt(g_t + eps) * d
//! s_t   = (1 - rho) * delta^2 + rho * s_{t-1}
//! theta = theta + delta
//! ```
//!
//! with `g_0 = s_0 = 0`.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    /// Multiplier on the update; 1.0 leaves the update untouched.
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig { lr: 1.0, rho: 0.95, epsilon: 1e-8 }
    }
}

/// Accumulators for every parameter buffer of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T> {
    pub config: AdadeltaConfig,
    /// Running average of squared gradients.
    pub grad_sq: Vec<Vec<T>>,
    /// Running average of squared updates.
    pub update_sq: Vec<Vec<T>>,
    pub steps: u64,
}

impl<T: Scalar> AdadeltaState<T> {
    /// Zero accumulators for buffers of the given lengths.
    pub fn new(lens: &[usize], config: AdadeltaConfig) -> Self {
        AdadeltaState {
            config,
            grad_sq: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            update_sq: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            steps: 0,
        }
    }

    pub fn buffer_lens(&self) -> Vec<usize> {
        self.grad_sq.iter().map(Vec::len).collect()
    }

    /// One update of every buffer. Non-finite gradients leave both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.grad_sq.len() || grads.len() != self.grad_sq.len() {
            return Err(Error::InvalidShape(format!(
                "optimizer tracks {} buffers, got {} parameter and {} gradient buffers",
                self.grad_sq.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), acc)) in params.iter().zip(grads).zip(&self.grad_sq).enumerate() {
            if p.len() != acc.len() || g.len() != acc.len() {
                return Err(Error::InvalidShape(format!(
                    "buffer {i}: {} parameters, {} gradients, {} accumulators",
                    p.len(),
                    g.len(),
                    acc.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in buffer {i}")));
            }
        }

        let rho = T::from_f64_lossy(self.config.rho);
        let decay = T::one() - rho;
        let eps = T::from_f64_lossy(self.config.epsilon);
        let lr = T::from_f64_lossy(self.config.lr);
        for ((p, g), (gs, us)) in params.iter_mut().zip(grads).zip(self.grad_sq.iter_mut().zip(&mut self.update_sq)) {
            for (((theta, &d), g_acc), s_acc) in p.iter_mut().zip(g).zip(gs.iter_mut()).zip(us.iter_mut()) {
                *g_acc = decay * d * d + rho * *g_acc;
                let delta = -lr * ((*s_acc + eps).sqrt() / (*g_acc + eps).sqrt()) * d;
                *s_acc = decay * delta * delta + rho * *s_acc;
                *theta = *theta + delta;
            }
        }
        self.steps += 1;
        Ok(())
    }
}
