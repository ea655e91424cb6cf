//! Backpropagation-capable layers.
//!
//! All layers work on batches: the first axis of every activation is the
//! sample axis. `forward` caches whatever `backward` needs; `backward`
//! consumes the upstream gradient, stores parameter gradients in the layer's
//! [`Param`]s (overwriting, not accumulating) and returns the gradient with
//! respect to the layer input.

mod activation;
mod conv;
mod dense;
mod dropout;
mod lrn;
mod pool;
mod regularize;
mod reshape;

pub use activation::{relu, relu_backward, ReluLayer};
pub use conv::Conv2dLayer;
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use dropout::{dropout_forward, DropoutLayer};
use dropout::dropout_forward_owned;
pub use lrn::{lrn_backward, lrn_forward, LrnLayer};
pub use pool::MaxPoolLayer;
pub use regularize::l2_penalty;
pub use reshape::{flatten, ReshapeLayer};

use crate::error::Result;
use crate::nsfold::NsLayer;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// What a parameter tensor is; decides L2 participation and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Kernel,
    Bias,
    Beta,
}

impl ParamKind {
    /// Weights and kernels are penalized by L2; biases and NS coefficients
    /// are not.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Kernel)
    }
}

/// A trainable tensor and its most recent gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: &'static str,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, kind: ParamKind, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name,
            kind,
            value,
            grad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2dLayer),
    Relu(ReluLayer),
    MaxPool(MaxPoolLayer),
    Lrn(LrnLayer),
    Reshape(ReshapeLayer),
    Ns(NsLayer),
    Dropout(DropoutLayer),
    Dense(DenseLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "max_pool",
            Layer::Lrn(_) => "lrn",
            Layer::Reshape(_) => "reshape",
            Layer::Ns(_) => "ns",
            Layer::Dropout(_) => "dropout",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn forward(&mut self, x: &Tensor, phase: Phase, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Lrn(l) => l.forward(x),
            Layer::Reshape(l) => l.forward(x),
            Layer::Ns(l) => l.forward(x),
            Layer::Dropout(l) => dropout_forward(x, l, phase, rng),
            Layer::Dense(l) => l.forward(x),
        }
    }

    /// [`Layer::forward`] on an owned input, which elementwise layers
    /// overwrite in place.
    pub fn forward_owned(&mut self, x: Tensor, phase: Phase, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Relu(l) => Ok(l.forward_owned(x)),
            Layer::Reshape(l) => l.forward_owned(x),
            Layer::Dropout(l) => dropout_forward_owned(x, l, phase, rng),
            other => other.forward(&x, phase, rng),
        }
    }

    /// [`Layer::backward`] on an owned upstream gradient.
    pub fn backward_owned(&mut self, upstream: Tensor, need_input: bool) -> Result<Option<Tensor>> {
        match self {
            Layer::Relu(l) => l.backward_owned(upstream).map(Some),
            Layer::Reshape(l) => l.backward_owned(upstream).map(Some),
            Layer::Dropout(l) => l.backward_owned(upstream).map(Some),
            other => other.backward(&upstream, need_input),
        }
    }

    /// Backward pass. Returns `None` for the input gradient when
    /// `need_input` is false and the layer can skip computing it.
    pub fn backward(&mut self, upstream: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        match self {
            Layer::Conv(l) => l.backward(upstream, need_input),
            Layer::Relu(l) => l.backward(upstream).map(Some),
            Layer::MaxPool(l) => l.backward(upstream).map(Some),
            Layer::Lrn(l) => l.backward(upstream).map(Some),
            Layer::Reshape(l) => l.backward(upstream).map(Some),
            Layer::Ns(l) => l.backward(upstream).map(Some),
            Layer::Dropout(l) => l.backward(upstream).map(Some),
            Layer::Dense(l) => l.backward(upstream, need_input),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Relu(_) | Layer::Lrn(_) | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Reshape(l) => l.output_shape(input),
            Layer::Ns(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => l.params(),
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Ns(l) => l.param().into_iter().collect(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => l.params_mut(),
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Ns(l) => l.param_mut().into_iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Which side of each kink the last forward landed on (ReLU signs, pool
    /// winners). Two forwards with equal signatures lie on the same smooth
    /// piece of the loss.
    pub fn kink_signature(&self) -> Option<Vec<usize>> {
        match self {
            Layer::Relu(l) => l.signature(),
            Layer::MaxPool(l) => l.signature(),
            _ => None,
        }
    }
}
