//! Adam optimizer over a network's parameter tensors.

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

/// Adam state: per-parameter first/second moment estimates plus the step
/// counter for bias correction. Moments are laid out in the network's
/// parameter visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-7, t: 0, moments: Vec::new() }
    }

    /// Applies one update from the gradients currently stored in the
    /// network. Rejects non-finite gradients before touching any parameter.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if self.moments.is_empty() {
            net.visit_params(&mut |_, value, _| {
                self.moments.push((Tensor::zeros(value.shape()), Tensor::zeros(value.shape())));
            });
        }

        let mut bad: Option<String> = None;
        net.visit_params(&mut |kind, _, grad| {
            if bad.is_none() {
                if let Some(i) = grad.first_non_finite() {
                    bad = Some(format!("{kind:?} gradient non-finite at flat index {i}"));
                }
            }
        });
        if let Some(msg) = bad {
            return Err(Error::Training(format!("non-finite gradient: {msg}")));
        }

        self.t += 1;
        let (lr, b1, b2, eps, t) = (self.lr, self.beta1, self.beta2, self.epsilon, self.t);
        let mut idx = 0;
        let moments = &mut self.moments;
        net.visit_params(&mut |_, value, grad| {
            let (m, v) = &mut moments[idx];
            idx += 1;
            adam_update(value.data_mut(), grad.data(), m.data_mut(), v.data_mut(), t, lr, b1, b2, eps);
        });
        Ok(())
    }
}

/// The Adam recurrence on raw slices:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`, then
/// `p <- p - lr * mhat / (sqrt(vhat) + eps)` with bias-corrected moments.
pub fn adam_update(
    value: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        value[i] -= lr * mhat / (vhat.sqrt() + epsilon);
    }
}
