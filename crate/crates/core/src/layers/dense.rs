//! Fully connected classifier head with fused softmax cross-entropy.
//!
//! The softmax and the loss are fused so the logits gradient is the exact
//! and numerically benign `(probs - onehot) / batch`. Softmax rows are
//! stabilized by subtracting the row maximum before exponentiation.

use crate::error::{Error, Result};
use crate::layers::ParamKind;
use crate::rng::{glorot_uniform, Rng};
use crate::tensor::Tensor;

/// Dense layer mapping `[batch, in_features]` to class probabilities.
#[derive(Debug, Clone)]
pub struct DenseSoftmax {
    in_features: usize,
    n_classes: usize,
    /// `[in_features, n_classes]`.
    pub(crate) weight: Tensor,
    /// `[n_classes]`.
    pub(crate) bias: Tensor,
    weight_grad: Tensor,
    bias_grad: Tensor,
    cache: Option<DenseCache>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    probs: Tensor,
}

impl DenseSoftmax {
    pub fn new(in_features: usize, n_classes: usize, rng: &mut Rng) -> Result<DenseSoftmax> {
        if in_features == 0 || n_classes == 0 {
            return Err(Error::invalid("dense layer needs positive feature and class counts"));
        }
        let weight = glorot_uniform(&[in_features, n_classes], in_features, n_classes, rng)?;
        Ok(DenseSoftmax {
            in_features,
            n_classes,
            weight,
            bias: Tensor::zeros(&[n_classes]),
            weight_grad: Tensor::zeros(&[in_features, n_classes]),
            bias_grad: Tensor::zeros(&[n_classes]),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_grad(&self) -> &Tensor {
        &self.weight_grad
    }

    pub fn bias_grad(&self) -> &Tensor {
        &self.bias_grad
    }

    /// (trainable, non_trainable).
    pub fn param_count(&self) -> (usize, usize) {
        ((self.in_features + 1) * self.n_classes, 0)
    }

    /// Returns `[batch, n_classes]` softmax probabilities.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() != 2 || input.shape()[1] != self.in_features {
            return Err(Error::shape(format!(
                "dense expects [batch, {}], got {:?}",
                self.in_features,
                input.shape()
            )));
        }
        let b = input.shape()[0];
        if b == 0 {
            return Err(Error::shape("dense input has an empty batch"));
        }
        let n = self.n_classes;
        let mut probs = Tensor::zeros(&[b, n]);
        let x = input.data();
        let w = self.weight.data();
        let bias = self.bias.data();
        let pd = probs.data_mut();
        for bi in 0..b {
            let xrow = &x[bi * self.in_features..][..self.in_features];
            let prow = &mut pd[bi * n..][..n];
            prow.copy_from_slice(bias);
            for (ci, &xv) in xrow.iter().enumerate() {
                let wrow = &w[ci * n..][..n];
                for (p, &wv) in prow.iter_mut().zip(wrow) {
                    *p += xv * wv;
                }
            }
            // Stabilized softmax in place over the logits.
            let max = prow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in prow.iter_mut() {
                *p = (*p - max).exp();
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
        }
        self.cache = Some(DenseCache {
            input: input.clone(),
            probs: probs.clone(),
        });
        Ok(probs)
    }

    /// Mean cross-entropy of the cached probabilities against `labels`.
    pub fn loss(&self, labels: &[usize]) -> Result<f64> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::layer("loss requested without a cached forward"))?;
        let b = cache.probs.shape()[0];
        self.check_labels(labels, b)?;
        let n = self.n_classes;
        let mut total = 0.0;
        for (bi, &label) in labels.iter().enumerate() {
            let p = cache.probs.data()[bi * n + label];
            total -= p.max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / b as f64)
    }

    /// Backward for the fused loss; returns the gradient wrt the input.
    pub fn backward(&mut self, labels: &[usize]) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::layer("dense backward without a cached forward"))?;
        let b = cache.probs.shape()[0];
        self.check_labels(labels, b)?;
        let n = self.n_classes;
        let cin = self.in_features;

        // dlogits = (probs - onehot) / batch.
        let mut dlogits = cache.probs.clone();
        {
            let d = dlogits.data_mut();
            for (bi, &label) in labels.iter().enumerate() {
                d[bi * n + label] -= 1.0;
            }
            for v in d.iter_mut() {
                *v /= b as f64;
            }
        }

        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
        let mut dx = Tensor::zeros(&[b, cin]);
        let x = cache.input.data();
        let w = self.weight.data();
        let wg = self.weight_grad.data_mut();
        let bg = self.bias_grad.data_mut();
        let dl = dlogits.data();
        let dxd = dx.data_mut();
        for bi in 0..b {
            let xrow = &x[bi * cin..][..cin];
            let drow = &dl[bi * n..][..n];
            let dxrow = &mut dxd[bi * cin..][..cin];
            for (bgv, &dv) in bg.iter_mut().zip(drow) {
                *bgv += dv;
            }
            for ci in 0..cin {
                let wrow = &w[ci * n..][..n];
                let wgrow = &mut wg[ci * n..][..n];
                let xv = xrow[ci];
                let mut acc = 0.0;
                for k in 0..n {
                    wgrow[k] += xv * drow[k];
                    acc += wrow[k] * drow[k];
                }
                dxrow[ci] += acc;
            }
        }
        Ok(dx)
    }

    fn check_labels(&self, labels: &[usize], batch: usize) -> Result<()> {
        if labels.len() != batch {
            return Err(Error::invalid(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                bad, self.n_classes
            )));
        }
        Ok(())
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        f(ParamKind::Kernel, &mut self.weight, &mut self.weight_grad);
        f(ParamKind::Bias, &mut self.bias, &mut self.bias_grad);
    }
}
