//! N-fold superposition (NS).
//!
//! The `t` incoming feature maps are split into `N` blocks of `s = t / N`
//! consecutive maps (map `l + r*s` is position `l` of block `r`). The
//! position-wise weighted sum over blocks
//!
//! ```text
//! M[l] = sum_{r=0}^{N-1} beta[r] * F[l + r*s],   l = 0..s
//! ```
//!
//! forms one new block, which is copied `N` times and flattened as
//! `[M[0..s], M[0..s], ...]`. The output has exactly as many elements as the
//! input stack, so the fully connected layer behind it keeps its shape.
//!
//! In backward, every copy of `M[l]` receives its own slice of the upstream
//! gradient; those slices are summed (`S[l]`) and then distributed to each
//! contributing map scaled by its coefficient. This is what couples the FC
//! weight slices of all copies into the gradient of every kernel in the
//! position group.
//!
//! A vector of `d` hidden units is handled as `d` maps of a single pixel.

use crate::error::{Error, Result};
use crate::layers::{DenseLayer, Param, ParamKind};
use crate::tensor::{gemm, Tensor};

/// Whether the coefficients are hand-set constants or trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsMode {
    /// Coefficients never change after construction (FNS).
    Fixed,
    /// Coefficients are parameters updated by the optimizer (TNS).
    Trainable,
}

#[derive(Clone, Debug)]
pub struct NsLayer {
    folds: usize,
    channels: usize,
    mode: NsMode,
    beta: Param,
    cache: Option<Tensor>,
    fused: Option<FusedCache>,
}

/// State of a fused NS + dense forward: the superposed block and the weight
/// slices summed over copies.
#[derive(Clone, Debug)]
struct FusedCache {
    block: Tensor,
    w_sum: Tensor,
}

/// Gradients of one NS application. `beta` is only reported for trainable
/// layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NsGrads {
    pub fms: Tensor,
    pub beta: Option<Vec<f64>>,
}

impl NsLayer {
    pub fn new(channels: usize, folds: usize, beta: Vec<f64>, mode: NsMode) -> Result<Self> {
        if folds == 0 || channels == 0 || channels % folds != 0 {
            return Err(Error::Config(format!(
                "NS fold count N = {folds} must divide the channel count t = {channels}"
            )));
        }
        if beta.len() != folds {
            return Err(Error::Config(format!(
                "NS needs {folds} coefficients, got {}",
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("NS coefficients must be finite".into()));
        }
        Ok(NsLayer {
            folds,
            channels,
            mode,
            beta: Param::new("beta", ParamKind::Beta, Tensor::new(vec![folds], beta)?),
            cache: None,
            fused: None,
        })
    }

    /// All `N` coefficients start at the same value.
    pub fn uniform(channels: usize, folds: usize, beta_init: f64, mode: NsMode) -> Result<Self> {
        Self::new(channels, folds, vec![beta_init; folds], mode)
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Maps per block, `t / N`.
    pub fn block_len(&self) -> usize {
        self.channels / self.folds
    }

    pub fn mode(&self) -> NsMode {
        self.mode
    }

    pub fn beta(&self) -> &[f64] {
        self.beta.value.data()
    }

    /// Replaces the coefficients, e.g. when restoring a checkpoint.
    pub fn set_beta(&mut self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.folds {
            return Err(Error::mismatch("NS beta", &[self.folds], &[beta.len()]));
        }
        self.beta.value.data_mut().copy_from_slice(beta);
        Ok(())
    }

    pub(crate) fn param(&self) -> Option<&Param> {
        (self.mode == NsMode::Trainable).then_some(&self.beta)
    }

    pub(crate) fn param_mut(&mut self) -> Option<&mut Param> {
        (self.mode == NsMode::Trainable).then_some(&mut self.beta)
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.first() != Some(&self.channels) {
            return Err(Error::mismatch("ns", &[self.channels], input));
        }
        Ok(vec![input.iter().product()])
    }

    /// `(batch, plane)` for a `B x t [x h x w]` input.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.ndim() < 2 || x.shape()[1] != self.channels {
            let mut expected = x.shape().to_vec();
            if expected.len() >= 2 {
                expected[1] = self.channels;
            }
            return Err(Error::mismatch("ns", &expected, x.shape()));
        }
        Ok((x.shape()[0], x.shape()[2..].iter().product()))
    }

    /// The superposed block `M` for every sample, `B x (s*plane)`.
    fn superpose(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, plane) = self.layout(x)?;
        let (t, s) = (self.channels, self.block_len());
        let beta = self.beta.value.data();
        let per = t * plane;
        let mut out = Tensor::zeros(&[batch, s * plane]);
        for (src, block) in x.data().chunks(per).zip(out.data_mut().chunks_mut(s * plane)) {
            for (r, &b) in beta.iter().enumerate() {
                let maps = &src[r * s * plane..(r + 1) * s * plane];
                for (m, &v) in block.iter_mut().zip(maps) {
                    *m += b * v;
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let block = self.superpose(x)?;
        let len = block.shape()[1];
        let mut out = Tensor::zeros(&[block.shape()[0], len * self.folds]);
        for (src, dst) in block.data().chunks(len).zip(out.data_mut().chunks_mut(len * self.folds)) {
            for copy in dst.chunks_mut(len) {
                copy.copy_from_slice(src);
            }
        }
        self.cache = Some(x.clone());
        self.fused = None;
        Ok(out)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        Ok(self.backward_full(upstream)?.fms)
    }

    fn backward_full(&mut self, upstream: &Tensor) -> Result<NsGrads> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("ns backward called before forward".into()))?;
        let (batch, plane) = self.layout(x)?;
        let (t, s) = (self.channels, self.block_len());
        let per = t * plane;
        if upstream.len() != batch * per {
            return Err(Error::mismatch("ns backward", &[batch, per], upstream.shape()));
        }
        let mut summed = Tensor::zeros(&[batch, s * plane]);
        for (up, acc) in upstream.data().chunks(per).zip(summed.data_mut().chunks_mut(s * plane)) {
            for copy in up.chunks(s * plane) {
                for (a, &u) in acc.iter_mut().zip(copy) {
                    *a += u;
                }
            }
        }
        self.backward_from_sum(&summed)
    }

    /// Backward given `S`, the upstream gradient summed over the `N` copies.
    fn backward_from_sum(&mut self, summed: &Tensor) -> Result<NsGrads> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("ns backward called before forward".into()))?;
        let (_, plane) = self.layout(x)?;
        let (t, s) = (self.channels, self.block_len());
        let per = t * plane;
        let beta = self.beta.value.data();
        let mut grad = Tensor::zeros(x.shape());
        let mut grad_beta = vec![0.0; self.folds];
        for ((sum, src), dst) in summed
            .data()
            .chunks(s * plane)
            .zip(x.data().chunks(per))
            .zip(grad.data_mut().chunks_mut(per))
        {
            for (r, &b) in beta.iter().enumerate() {
                let range = r * s * plane..(r + 1) * s * plane;
                for ((g, &sv), &xv) in dst[range.clone()].iter_mut().zip(sum).zip(&src[range]) {
                    *g = b * sv;
                    grad_beta[r] += sv * xv;
                }
            }
        }
        let beta_grad = match self.mode {
            NsMode::Trainable => {
                self.beta.grad.data_mut().copy_from_slice(&grad_beta);
                Some(grad_beta)
            }
            NsMode::Fixed => None,
        };
        Ok(NsGrads {
            fms: grad,
            beta: beta_grad,
        })
    }
}

/// NS directly followed by a dense layer, without materializing the copies.
/// Copy `k` of `M` meets weight rows `W_k`, so
/// `[M, ..., M] W = M (W_0 + ... + W_{N-1})`.
pub(crate) fn fused_dense_forward(ns: &mut NsLayer, dense: &mut DenseLayer, x: &Tensor) -> Result<Tensor> {
    let block = ns.superpose(x)?;
    let (b, len) = (block.shape()[0], block.shape()[1]);
    let d_out = dense.d_out();
    if len * ns.folds != dense.d_in() {
        return Err(Error::mismatch("ns + dense", &[dense.d_in()], &[len * ns.folds]));
    }
    let w = dense.weight.value.data();
    let mut w_sum = Tensor::new(vec![len, d_out], w[..len * d_out].to_vec())?;
    for copy in w.chunks(len * d_out).skip(1) {
        for (a, &v) in w_sum.data_mut().iter_mut().zip(copy) {
            *a += v;
        }
    }
    let mut y = Tensor::zeros(&[b, d_out]);
    for row in y.data_mut().chunks_mut(d_out) {
        row.copy_from_slice(dense.bias.value.data());
    }
    gemm(b, len, d_out, block.data(), (len, 1), w_sum.data(), (d_out, 1), y.data_mut(), 1.0);
    dense.clear_cache();
    ns.cache = Some(x.clone());
    ns.fused = Some(FusedCache { block, w_sum });
    Ok(y)
}

/// Backward of [`fused_dense_forward`]; fills the dense and NS parameter
/// gradients and returns the gradient for the NS input.
pub(crate) fn fused_dense_backward(ns: &mut NsLayer, dense: &mut DenseLayer, upstream: &Tensor) -> Result<Tensor> {
    let FusedCache { block, w_sum } = ns
        .fused
        .take()
        .ok_or_else(|| Error::State("fused ns backward called before forward".into()))?;
    let (b, len) = (block.shape()[0], block.shape()[1]);
    let d_out = dense.d_out();
    if upstream.len() != b * d_out {
        return Err(Error::mismatch("ns + dense backward", &[b, d_out], upstream.shape()));
    }
    // every copy sees the same input, so all weight slices get M^T u
    let g = dense.weight.grad.data_mut();
    gemm(len, b, d_out, block.data(), (1, len), upstream.data(), (d_out, 1), g, 0.0);
    let (first, rest) = g.split_at_mut(len * d_out);
    for copy in rest.chunks_mut(len * d_out) {
        copy.copy_from_slice(first);
    }
    let bias = dense.bias.grad.data_mut();
    bias.fill(0.0);
    for row in upstream.data().chunks(d_out) {
        bias.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    let mut summed = Tensor::zeros(&[b, len]);
    gemm(b, d_out, len, upstream.data(), (d_out, 1), w_sum.data(), (1, d_out), summed.data_mut(), 0.0);
    Ok(ns.backward_from_sum(&summed)?.fms)
}

/// Superposes a single `t x h x w` feature-map stack; returns `1 x (t*h*w)`.
/// The input is cached on `layer` for [`ns_backward`].
pub fn ns_forward(fms: &Tensor, layer: &mut NsLayer) -> Result<Tensor> {
    if fms.ndim() != 3 {
        return Err(Error::InvalidShape {
            op: "ns_forward",
            shape: fms.shape().to_vec(),
            reason: "expected t x h x w".into(),
        });
    }
    let batched = fms.clone().reshape(&[&[1][..], fms.shape()].concat())?;
    layer.forward(&batched)
}

/// Gradients for the stack passed to the last [`ns_forward`] (or
/// [`ns_apply_vector`]) call on this layer. `fms` has the shape of that input
/// without the leading batch axis.
pub fn ns_backward(upstream: &Tensor, layer: &mut NsLayer) -> Result<NsGrads> {
    let mut grads = layer.backward_full(upstream)?;
    let shape = grads.fms.shape()[1..].to_vec();
    grads.fms = if shape.len() == 1 {
        grads.fms.reshape(&[1, shape[0]])?
    } else {
        grads.fms.reshape(&shape)?
    };
    Ok(grads)
}

/// Number of trainable parameters NS adds: `N` for trainable coefficients,
/// none for fixed ones.
pub fn ns_param_count(layer: &NsLayer) -> usize {
    match layer.mode {
        NsMode::Fixed => 0,
        NsMode::Trainable => layer.folds,
    }
}

/// Applies NS to a `1 x d` hidden vector, treating it as `d` one-pixel maps
/// grouped into `N` blocks of `d / N` consecutive units.
pub fn ns_apply_vector(hidden: &Tensor, layer: &mut NsLayer) -> Result<Tensor> {
    let d = hidden.len();
    if d % layer.folds != 0 {
        return Err(Error::Config(format!(
            "NS fold count N = {} must divide the vector length d = {d}",
            layer.folds
        )));
    }
    if d != layer.channels {
        return Err(Error::mismatch("ns_apply_vector", &[1, layer.channels], hidden.shape()));
    }
    layer.forward(&hidden.clone().reshape(&[1, d])?)
}
