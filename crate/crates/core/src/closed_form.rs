//! Closed-form gradients of the one-convolution toy network.
//!
//! The toy network is a single-channel input `X` (`h x w`), `t` kernels
//! applied in Valid mode without bias and without a nonlinearity, either a
//! plain flatten or an NS layer, and one dense layer to the class logits
//! with a single bias value shared by every output:
//!
//! ```text
//! I^l = corr(X, K^l)            (h' x w' each, p = h'w' pixels)
//! C   = flatten(I) or NS(I)     (t*p values, slice l is C^l)
//! y_o = sum_j C[j] W[j, o] + b
//! L   = -ln softmax(y)[label]
//! ```
//!
//! With `q_o = softmax(y)_o - [o == label]`, the gradient of slice `l` of the
//! weights is `q_o * C^l` for column `o`, and the gradient reaching slice `l`
//! of the dense input is `g^l = sum_o q_o W^l_o`. Without NS the kernel
//! gradient is `corr(X, g^l)`: only the weight slice `l` matters. With NS,
//! map `l + r*s` feeds every copy of superposed position `l`, so
//!
//! ```text
//! dL/dK^{l + r*s} = beta_r * corr(X, sum_k g^{l + k*s})
//! ```
//!
//! and the `N` kernels of one position group share the sum of `N` weight
//! slices. Dropping the `beta_r` factor (reading the shared sum alone as the
//! kernel gradient) is off by exactly `1 / beta_r`;
//! [`shared_slice_kernel_grad`] evaluates that reading so the difference can
//! be reported.

use crate::error::{Error, Result};
use crate::layers::{Conv2dLayer, DenseLayer, Layer, Phase, ReshapeLayer};
use crate::loss::{softmax, SoftmaxCE};
use crate::model::Model;
use crate::nsfold::{NsLayer, NsMode};
use crate::rng::Rng;
use crate::tensor::{conv2d, ConvMode, Tensor};

pub const TOY_CLASSES: usize = 10;

#[derive(Clone, Debug)]
pub struct ToyNetwork {
    /// `t x m x n`.
    pub kernels: Tensor,
    /// `(t*p) x 10`.
    pub weight: Tensor,
    /// Shared by all outputs.
    pub bias: f64,
    /// NS coefficients, or `None` for a plain flatten.
    pub beta: Option<Vec<f64>>,
    pub input_hw: (usize, usize),
}

impl ToyNetwork {
    /// Gaussian kernels and weights (std 0.5), bias 0.1. With `folds` set,
    /// coefficients are drawn uniformly from [0.25, 1.25].
    pub fn random(
        t: usize,
        folds: Option<usize>,
        input_hw: (usize, usize),
        kernel_hw: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        let (h, w) = input_hw;
        if kernel_hw.0 > h || kernel_hw.1 > w || t == 0 {
            return Err(Error::Config(format!(
                "toy network needs t >= 1 and kernels no larger than the input, got t = {t}, {kernel_hw:?} on {input_hw:?}"
            )));
        }
        let p = (h - kernel_hw.0 + 1) * (w - kernel_hw.1 + 1);
        let kernels = Tensor::randn(&[t, kernel_hw.0, kernel_hw.1], 0.5, rng);
        let weight = Tensor::randn(&[t * p, TOY_CLASSES], 0.5, rng);
        let beta = match folds {
            Some(n) => {
                if n == 0 || t % n != 0 {
                    return Err(Error::Config(format!(
                        "NS fold count N = {n} must divide the channel count t = {t}"
                    )));
                }
                Some(Tensor::uniform(&[n], 0.25, 1.25, rng).into_data())
            }
            None => None,
        };
        Ok(ToyNetwork {
            kernels,
            weight,
            bias: 0.1,
            beta,
            input_hw,
        })
    }

    pub fn t(&self) -> usize {
        self.kernels.shape()[0]
    }

    /// Pixels per feature map.
    pub fn map_len(&self) -> usize {
        let ks = self.kernels.shape();
        (self.input_hw.0 - ks[1] + 1) * (self.input_hw.1 - ks[2] + 1)
    }

    fn map_hw(&self) -> (usize, usize) {
        let ks = self.kernels.shape();
        (self.input_hw.0 - ks[1] + 1, self.input_hw.1 - ks[2] + 1)
    }

    /// The same network as a [`Model`], for backpropagation.
    pub fn to_model(&self) -> Result<Model> {
        let (t, m, n) = (self.t(), self.kernels.shape()[1], self.kernels.shape()[2]);
        let conv = Conv2dLayer::from_parts(self.kernels.clone().reshape(&[t, 1, m, n])?, None, ConvMode::Valid)?;
        let fold = match &self.beta {
            Some(beta) => Layer::Ns(NsLayer::new(t, beta.len(), beta.clone(), NsMode::Trainable)?),
            None => Layer::Reshape(ReshapeLayer::flatten(t * self.map_len())),
        };
        let dense = DenseLayer::from_parts(self.weight.clone(), Tensor::filled(&[1, TOY_CLASSES], self.bias))?;
        Model::new(
            vec![1, self.input_hw.0, self.input_hw.1],
            vec![Layer::Conv(conv), fold, Layer::Dense(dense)],
        )
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.input_hw.0, self.input_hw.1] {
            return Err(Error::mismatch("toy input", &[self.input_hw.0, self.input_hw.1], x.shape()));
        }
        Ok(())
    }

    /// Raw maps `I^l`, each `h' x w'`.
    pub fn maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let (m, n) = (self.kernels.shape()[1], self.kernels.shape()[2]);
        (0..self.t())
            .map(|l| {
                let k = Tensor::new(vec![m, n], self.kernels.data()[l * m * n..(l + 1) * m * n].to_vec())?;
                conv2d(x, &k, ConvMode::Valid)
            })
            .collect()
    }

    /// Dense-layer input `C` as a `1 x (t*p)` row, computed directly from the
    /// block formulas.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let maps = self.maps(x)?;
        let t = self.t();
        let p = self.map_len();
        let mut c = Vec::with_capacity(t * p);
        match &self.beta {
            None => maps.iter().for_each(|m| c.extend_from_slice(m.data())),
            Some(beta) => {
                let s = t / beta.len();
                let block: Vec<f64> = (0..s)
                    .flat_map(|l| {
                        let maps = &maps;
                        (0..p).map(move |px| beta.iter().enumerate().map(|(r, b)| b * maps[l + r * s].data()[px]).sum())
                    })
                    .collect::<Vec<f64>>();
                for _ in 0..beta.len() {
                    c.extend_from_slice(&block);
                }
            }
        }
        Tensor::new(vec![1, t * p], c)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.features(x)?;
        let mut y = vec![self.bias; TOY_CLASSES];
        for (j, &cj) in c.data().iter().enumerate() {
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += cj * self.weight.data()[j * TOY_CLASSES + o];
            }
        }
        Tensor::new(vec![1, TOY_CLASSES], y)
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        let mut ce = SoftmaxCE::new(TOY_CLASSES);
        ce.forward(&self.logits(x)?, &[label])
    }

    /// `q_o = softmax(y)_o - [o == label]`.
    fn output_error(&self, x: &Tensor, label: usize) -> Result<Vec<f64>> {
        if label >= TOY_CLASSES {
            return Err(Error::Index {
                what: "class label",
                index: label,
                len: TOY_CLASSES,
            });
        }
        let mut q = softmax(&self.logits(x)?).into_data();
        q[label] -= 1.0;
        Ok(q)
    }

    /// `g^l = sum_o q_o W^l_o` as an `h' x w'` map.
    fn slice_error(&self, q: &[f64], slice: usize) -> Result<Tensor> {
        let p = self.map_len();
        let (hh, ww) = self.map_hw();
        let g: Vec<f64> = (0..p)
            .map(|px| {
                let row = &self.weight.data()[(slice * p + px) * TOY_CLASSES..(slice * p + px + 1) * TOY_CLASSES];
                row.iter().zip(q).map(|(w, q)| w * q).sum()
            })
            .collect();
        Tensor::new(vec![hh, ww], g)
    }

    fn group_error(&self, q: &[f64], kernel: usize) -> Result<(Tensor, f64)> {
        match &self.beta {
            None => Ok((self.slice_error(q, kernel)?, 1.0)),
            Some(beta) => {
                let s = self.t() / beta.len();
                let (l, r) = (kernel % s, kernel / s);
                let mut sum = self.slice_error(q, l)?;
                for k in 1..beta.len() {
                    sum = sum.add(&self.slice_error(q, l + k * s)?)?;
                }
                Ok((sum, beta[r]))
            }
        }
    }

    fn check_kernel(&self, kernel: usize) -> Result<()> {
        if kernel >= self.t() {
            return Err(Error::Index {
                what: "kernel",
                index: kernel,
                len: self.t(),
            });
        }
        Ok(())
    }
}

/// Gradient of the weight rows that multiply slice `slice` of the dense
/// input `c` (slice width `width`), from the logits alone:
/// column `o` is `(softmax(y)_o - [o == label]) * C^slice`. Returns a
/// `width x classes` tensor.
pub fn closed_form_weight_grad(c: &Tensor, logits: &Tensor, label: usize, slice: usize, width: usize) -> Result<Tensor> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::Index {
            what: "class label",
            index: label,
            len: classes,
        });
    }
    if width == 0 || (slice + 1) * width > c.len() {
        return Err(Error::Index {
            what: "weight slice",
            index: slice,
            len: if width == 0 { 0 } else { c.len() / width },
        });
    }
    let mut q = softmax(logits).into_data();
    q[label] -= 1.0;
    let cl = &c.data()[slice * width..(slice + 1) * width];
    let mut out = Tensor::zeros(&[width, classes]);
    for (row, &cv) in out.data_mut().chunks_mut(classes).zip(cl) {
        for (o, v) in row.iter_mut().enumerate() {
            *v = q[o] * cv;
        }
    }
    Ok(out)
}

/// Kernel gradient of the toy network from the closed form: `corr(X, g^l)`
/// without NS, `beta_r * corr(X, sum_k g^{l+k*s})` with NS.
pub fn closed_form_kernel_grad(net: &ToyNetwork, x: &Tensor, label: usize, kernel: usize) -> Result<Tensor> {
    net.check_kernel(kernel)?;
    let q = net.output_error(x, label)?;
    let (g, scale) = net.group_error(&q, kernel)?;
    Ok(conv2d(x, &g, ConvMode::Valid)?.scale(scale))
}

/// The shared-slice sum `corr(X, sum_k g^{l+k*s})` with no coefficient
/// factor. Equals [`closed_form_kernel_grad`] divided by `beta_r`.
pub fn shared_slice_kernel_grad(net: &ToyNetwork, x: &Tensor, label: usize, kernel: usize) -> Result<Tensor> {
    net.check_kernel(kernel)?;
    let q = net.output_error(x, label)?;
    let (g, _) = net.group_error(&q, kernel)?;
    conv2d(x, &g, ConvMode::Valid)
}

/// Backpropagated kernel gradients of the toy network (`t x m x n`) and the
/// dense input it saw.
pub fn backprop_toy(net: &ToyNetwork, x: &Tensor, label: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let mut model = net.to_model()?;
    let mut rng = crate::rng::seeded(0);
    let batch = x.clone().reshape(&[1, 1, net.input_hw.0, net.input_hw.1])?;
    let logits = model.forward(&batch, Phase::Eval, &mut rng)?;
    let mut ce = SoftmaxCE::new(TOY_CLASSES);
    ce.forward(&logits, &[label])?;
    model.backward(&ce.backward()?)?;
    let kernels = model.layers()[0].params()[0].grad.clone().reshape(net.kernels.shape())?;
    let weight = model.layers()[2].params()[0].grad.clone();
    Ok((kernels, weight, logits))
}
