//! Differentiable layers with explicit forward and backward passes.
//!
//! Layouts are channels-last throughout: 1D inputs are `[batch, length,
//! channels]`, 2D inputs `[batch, height, width, channels]`. Each layer
//! caches whatever its backward pass needs during forward; calling backward
//! without a cached forward is an error, as is training through a
//! batch-norm forward that ran in inference mode.

mod batchnorm;
mod conv;
mod dense;
mod pool;
mod relu;

pub use batchnorm::{BatchNorm, BatchNormSpec};
pub use conv::{same_pad, Conv, ConvSpec};
pub use dense::DenseSoftmax;
pub use pool::{GlobalAvgPool, MaxPool};
pub use relu::Relu;

use crate::error::Result;
use crate::tensor::Tensor;

/// Spatial rank of a layer or network: 1 for raw waveforms, 2 for spectrograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    One,
    Two,
}

impl Rank {
    pub fn as_u8(self) -> u8 {
        match self {
            Rank::One => 1,
            Rank::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Rank> {
        match v {
            1 => Some(Rank::One),
            2 => Some(Rank::Two),
            _ => None,
        }
    }
}

/// Batch-norm behaviour switch: batch statistics vs moving statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// What a trainable tensor is, for regularization and ledger purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
    Gamma,
    Beta,
}

/// One layer in a stem or residual-branch sequence.
#[derive(Debug, Clone)]
pub enum LayerNode {
    Conv(Conv),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool),
}

impl LayerNode {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            LayerNode::Conv(l) => l.forward(input),
            LayerNode::BatchNorm(l) => l.forward(input, mode),
            LayerNode::Relu(l) => l.forward(input),
            LayerNode::MaxPool(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match self {
            LayerNode::Conv(l) => l.backward(upstream),
            LayerNode::BatchNorm(l) => l.backward(upstream),
            LayerNode::Relu(l) => l.backward(upstream),
            LayerNode::MaxPool(l) => l.backward(upstream),
        }
    }

    /// Visits trainable parameters paired with their gradients, in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor, &mut Tensor)) {
        match self {
            LayerNode::Conv(l) => l.visit_params(f),
            LayerNode::BatchNorm(l) => l.visit_params(f),
            LayerNode::Relu(_) | LayerNode::MaxPool(_) => {}
        }
    }

    /// Visits non-trainable state (batch-norm moving statistics).
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        if let LayerNode::BatchNorm(l) = self {
            l.visit_state(f)
        }
    }

    /// Visits every persisted tensor (parameters then state) in checkpoint order.
    pub fn visit_tensors(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            LayerNode::Conv(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            LayerNode::BatchNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
                f(&mut l.moving_mean);
                f(&mut l.moving_var);
            }
            LayerNode::Relu(_) | LayerNode::MaxPool(_) => {}
        }
    }

    /// (trainable, non_trainable) parameter counts.
    pub fn param_count(&self) -> (usize, usize) {
        match self {
            LayerNode::Conv(l) => l.spec().param_count(),
            LayerNode::BatchNorm(l) => l.spec().param_count(),
            LayerNode::Relu(_) | LayerNode::MaxPool(_) => (0, 0),
        }
    }
}
