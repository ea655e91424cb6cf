use super::{Param, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer `y = x W + b` with `W: d_in x d_out` and a
/// per-output bias.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

/// Gradients of one dense layer application.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    /// He-initialized layer: weights ~ N(0, 2/d_in), zero bias.
    pub fn new<R: rand::Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / d_in as f64).sqrt();
        Self::from_parts(Tensor::randn(&[d_in, d_out], std, rng), Tensor::zeros(&[1, d_out]))
            .expect("shapes built consistently")
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.len() != weight.shape()[1] {
            return Err(Error::mismatch("dense", weight.shape(), bias.shape()));
        }
        let d_out = weight.shape()[1];
        Ok(DenseLayer {
            weight: Param::new("weight", ParamKind::Weight, weight),
            bias: Param::new("bias", ParamKind::Bias, bias.reshape(&[1, d_out])?),
            cache: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        if n != self.d_in() {
            return Err(Error::mismatch("dense", &[self.d_in()], input));
        }
        Ok(vec![self.d_out()])
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = dense_forward(x, self)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        let (b, d_in, d_out) = check_batch(x, upstream, self)?;
        gemm(d_in, b, d_out, x.data(), (1, d_in), upstream.data(), (d_out, 1), self.weight.grad.data_mut(), 0.0);
        column_sums(upstream, self.bias.grad.data_mut());
        if !need_input {
            return Ok(None);
        }
        let mut gx = Tensor::zeros(&[b, d_in]);
        gemm(b, d_out, d_in, upstream.data(), (d_out, 1), self.weight.value.data(), (1, d_out), gx.data_mut(), 0.0);
        Ok(Some(gx))
    }
}

fn check_batch(x: &Tensor, upstream: &Tensor, layer: &DenseLayer) -> Result<(usize, usize, usize)> {
    let (d_in, d_out) = (layer.d_in(), layer.d_out());
    let b = x.shape()[0];
    if x.len() != b * d_in {
        return Err(Error::mismatch("dense", &[b, d_in], x.shape()));
    }
    if upstream.len() != b * d_out {
        return Err(Error::mismatch("dense backward", &[b, d_out], upstream.shape()));
    }
    Ok((b, d_in, d_out))
}

fn column_sums(m: &Tensor, out: &mut [f64]) {
    out.fill(0.0);
    for row in m.data().chunks(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `y = x W + b` for a `B x d_in` (or any `B x ...` flattening to it) input.
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let (d_in, d_out) = (layer.d_in(), layer.d_out());
    let b = x.shape()[0];
    if x.len() != b * d_in {
        return Err(Error::mismatch("dense", &[b, d_in], x.shape()));
    }
    let mut y = Tensor::zeros(&[b, d_out]);
    for row in y.data_mut().chunks_mut(d_out) {
        row.copy_from_slice(layer.bias.value.data());
    }
    gemm(b, d_in, d_out, x.data(), (d_in, 1), layer.weight.value.data(), (d_out, 1), y.data_mut(), 1.0);
    Ok(y)
}

/// Gradients of `dense_forward` at input `x` for an upstream gradient:
/// `grad_W[i, o] = sum_b x[b, i] u[b, o]`, `grad_x = u W^T`, `grad_b = sum_b u`.
pub fn dense_backward(upstream: &Tensor, layer: &DenseLayer, x: &Tensor) -> Result<DenseGrads> {
    let mut scratch = layer.clone();
    scratch.cache = Some(x.clone());
    let input = scratch.backward(upstream, true)?.expect("input gradient requested");
    Ok(DenseGrads {
        input,
        weight: scratch.weight.grad,
        bias: scratch.bias.grad,
    })
}
