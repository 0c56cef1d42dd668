//! Batch normalization over the trailing channel axis.
//!
//! Statistics are taken over every non-channel axis (batch and space), with
//! the biased 1/N variance. Training mode normalizes by batch statistics
//! and refreshes the moving estimates; inference mode normalizes by the
//! moving estimates and caches nothing, so a backward pass after an
//! inference forward is rejected rather than silently mis-differentiated.

use crate::error::{Error, Result};
use crate::layers::ParamKind;
use crate::tensor::Tensor;

use super::Mode;

/// Channel count plus the two numeric knobs of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormSpec {
    pub channels: usize,
    /// Added to the variance before the square root.
    pub epsilon: f64,
    /// Decay of the moving statistics: `m <- momentum * m + (1 - momentum) * batch`.
    pub momentum: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> BatchNormSpec {
        BatchNormSpec {
            channels,
            epsilon: 1e-3,
            momentum: 0.99,
        }
    }

    /// (trainable, non_trainable): scale and shift train; moving stats do not.
    pub fn param_count(&self) -> (usize, usize) {
        (2 * self.channels, 2 * self.channels)
    }
}

struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl std::fmt::Debug for BnCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BnCache").finish_non_exhaustive()
    }
}

impl Clone for BnCache {
    fn clone(&self) -> Self {
        BnCache {
            xhat: self.xhat.clone(),
            inv_std: self.inv_std.clone(),
        }
    }
}

/// The layer: scale/shift parameters plus moving statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    spec: BatchNormSpec,
    pub(crate) gamma: Tensor,
    pub(crate) beta: Tensor,
    pub(crate) moving_mean: Tensor,
    pub(crate) moving_var: Tensor,
    gamma_grad: Tensor,
    beta_grad: Tensor,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(spec: BatchNormSpec) -> Result<BatchNorm> {
        if spec.channels == 0 {
            return Err(Error::invalid("batch norm needs at least one channel"));
        }
        if !(spec.epsilon > 0.0) || !(0.0..1.0).contains(&spec.momentum) {
            return Err(Error::invalid(format!(
                "batch norm epsilon must be positive and momentum in [0, 1), got ({}, {})",
                spec.epsilon, spec.momentum
            )));
        }
        let c = spec.channels;
        Ok(BatchNorm {
            spec,
            gamma: Tensor::filled(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            moving_mean: Tensor::zeros(&[c]),
            moving_var: Tensor::filled(&[c], 1.0),
            gamma_grad: Tensor::zeros(&[c]),
            beta_grad: Tensor::zeros(&[c]),
            cache: None,
        })
    }

    pub fn spec(&self) -> &BatchNormSpec {
        &self.spec
    }

    pub fn gamma(&self) -> &Tensor {
        &self.gamma
    }

    pub fn beta(&self) -> &Tensor {
        &self.beta
    }

    pub fn moving_mean(&self) -> &Tensor {
        &self.moving_mean
    }

    pub fn moving_var(&self) -> &Tensor {
        &self.moving_var
    }

    pub fn gamma_grad(&self) -> &Tensor {
        &self.gamma_grad
    }

    pub fn beta_grad(&self) -> &Tensor {
        &self.beta_grad
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let shape = input.shape();
        if shape.len() < 2 {
            return Err(Error::shape(format!(
                "batch norm expects a batched channels-last tensor, got {:?}",
                shape
            )));
        }
        let c = shape[shape.len() - 1];
        if c != self.spec.channels {
            return Err(Error::shape(format!(
                "batch norm expects {} channels, got {}",
                self.spec.channels, c
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "batch norm input has a zero axis: {:?}",
                shape
            )));
        }
        Ok(input.len() / c)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let rows = self.check_input(input)?;
        let c = self.spec.channels;
        match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for row in input.data().chunks_exact(c) {
                    for (m, &x) in mean.iter_mut().zip(row) {
                        *m += x;
                    }
                }
                for m in &mut mean {
                    *m /= rows as f64;
                }
                for row in input.data().chunks_exact(c) {
                    for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
                        let d = x - m;
                        *v += d * d;
                    }
                }
                for v in &mut var {
                    *v /= rows as f64;
                }
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|&v| 1.0 / (v + self.spec.epsilon).sqrt())
                    .collect();

                let mut xhat = Tensor::zeros(input.shape());
                for (orow, row) in xhat.data_mut().chunks_exact_mut(c).zip(input.data().chunks_exact(c)) {
                    for (((o, &x), &m), &istd) in orow.iter_mut().zip(row).zip(&mean).zip(&inv_std) {
                        *o = (x - m) * istd;
                    }
                }
                let mut out = Tensor::zeros(input.shape());
                let (gam, bet) = (self.gamma.data(), self.beta.data());
                for (orow, xrow) in out.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
                    for (((o, &xh), &g), &b) in orow.iter_mut().zip(xrow).zip(gam).zip(bet) {
                        *o = g * xh + b;
                    }
                }

                let mom = self.spec.momentum;
                for ((mm, mv), (&bm, &bv)) in self
                    .moving_mean
                    .data_mut()
                    .iter_mut()
                    .zip(self.moving_var.data_mut())
                    .zip(mean.iter().zip(&var))
                {
                    *mm = mom * *mm + (1.0 - mom) * bm;
                    *mv = mom * *mv + (1.0 - mom) * bv;
                }

                self.cache = Some(BnCache { xhat, inv_std });
                Ok(out)
            }
            Mode::Infer => {
                self.cache = None;
                let mut out = Tensor::zeros(input.shape());
                let (gam, bet) = (self.gamma.data(), self.beta.data());
                let (mm, mv) = (self.moving_mean.data(), self.moving_var.data());
                let scale: Vec<f64> = gam
                    .iter()
                    .zip(mv)
                    .map(|(&g, &v)| g / (v + self.spec.epsilon).sqrt())
                    .collect();
                for (orow, row) in out.data_mut().chunks_exact_mut(c).zip(input.data().chunks_exact(c)) {
                    for ((((o, &x), &m), &s), &b) in
                        orow.iter_mut().zip(row).zip(mm).zip(&scale).zip(bet)
                    {
                        *o = (x - m) * s + b;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Full adjoint through the batch statistics; requires a training forward.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::layer("batch norm backward requires a forward in training mode")
        })?;
        if upstream.shape() != cache.xhat.shape() {
            return Err(Error::shape(format!(
                "batch norm upstream gradient has shape {:?}, expected {:?}",
                upstream.shape(),
                cache.xhat.shape()
            )));
        }
        let c = self.spec.channels;
        let rows = upstream.len() / c;
        let n = rows as f64;

        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (grow, xrow) in upstream.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for (((sg, sgx), &g), &xh) in sum_g.iter_mut().zip(&mut sum_gx).zip(grow).zip(xrow) {
                *sg += g;
                *sgx += g * xh;
            }
        }
        self.beta_grad.data_mut().copy_from_slice(&sum_g);
        self.gamma_grad.data_mut().copy_from_slice(&sum_gx);

        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        let mut dx = Tensor::zeros(cache.xhat.shape());
        let gam = self.gamma.data();
        let mean_g: Vec<f64> = sum_g.iter().map(|&s| s / n).collect();
        let mean_gx: Vec<f64> = sum_gx.iter().map(|&s| s / n).collect();
        for ((drow, grow), xrow) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(upstream.data().chunks_exact(c))
            .zip(cache.xhat.data().chunks_exact(c))
        {
            for i in 0..c {
                drow[i] = gam[i]
                    * cache.inv_std[i]
                    * (grow[i] - mean_g[i] - xrow[i] * mean_gx[i]);
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        f(ParamKind::Gamma, &mut self.gamma, &mut self.gamma_grad);
        f(ParamKind::Beta, &mut self.beta, &mut self.beta_grad);
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.moving_mean);
        f(&mut self.moving_var);
    }
}
