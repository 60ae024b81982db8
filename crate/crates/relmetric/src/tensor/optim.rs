//! RMSProp with per-parameter squared-gradient accumulators.

use crate::error::{Error, Result};

/// Optimizer state: one accumulator buffer per parameter tensor, aligned
/// with the model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(sizes: &[usize], decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            acc: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.acc
    }

    pub fn accumulators_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.acc
    }

    /// One update for parameter tensor `idx`:
    /// acc ← decay·acc + (1−decay)·g², p ← p − lr·g/√(acc+ε).
    ///
    /// `name` and `step` only feed the diagnostics on non-finite gradients.
    pub fn step(
        &mut self,
        idx: usize,
        name: &str,
        step: usize,
        param: &mut [f64],
        grad: &[f64],
        lr: f64,
    ) -> Result<()> {
        let acc = &mut self.acc[idx];
        if param.len() != grad.len() || param.len() != acc.len() {
            return Err(Error::shape(format!(
                "rmsprop: parameter {} has {} values, gradient {}, accumulator {}",
                name,
                param.len(),
                grad.len(),
                acc.len()
            )));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient for parameter {} (element {}) at step {}",
                name, bad, step
            )));
        }
        for i in 0..param.len() {
            let g = grad[i];
            acc[i] = self.decay * acc[i] + (1.0 - self.decay) * g * g;
            param[i] -= lr * g / (acc[i] + self.eps).sqrt();
        }
        Ok(())
    }
}
