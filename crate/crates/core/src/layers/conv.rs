use super::{Param, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{conv_backward_batch, conv_forward_batch, ConvMode, Tensor};

/// Stride-1 convolution layer with `t` kernels of `c x m x n` and an
/// optional per-map bias.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub kernels: Param,
    pub bias: Option<Param>,
    pub mode: ConvMode,
    cache: Option<Tensor>,
}

impl Conv2dLayer {
    /// He-initialized kernels (`std = sqrt(2 / (c*m*n))`), zero bias.
    pub fn new<R: rand::Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        mode: ConvMode,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let k = Tensor::randn(&[out_channels, in_channels, kernel.0, kernel.1], (2.0 / fan_in as f64).sqrt(), rng);
        let bias = with_bias.then(|| Tensor::zeros(&[out_channels]));
        Self::from_parts(k, bias, mode).expect("shapes built consistently")
    }

    pub fn from_parts(kernels: Tensor, bias: Option<Tensor>, mode: ConvMode) -> Result<Self> {
        if kernels.ndim() != 4 {
            return Err(Error::InvalidShape {
                op: "conv layer",
                shape: kernels.shape().to_vec(),
                reason: "kernels must be t x c x m x n".into(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != kernels.shape()[0] {
                return Err(Error::mismatch("conv bias", &[kernels.shape()[0]], b.shape()));
            }
        }
        Ok(Conv2dLayer {
            kernels: Param::new("kernels", ParamKind::Kernel, kernels),
            bias: bias.map(|b| Param::new("bias", ParamKind::Bias, b)),
            mode,
            cache: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.value.shape()[0]
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let ks = self.kernels.value.shape();
        match input {
            [c, h, w] if *c == ks[1] => {
                if self.mode == ConvMode::Valid && (ks[2] > *h || ks[3] > *w) {
                    return Err(Error::mismatch("conv2d", &ks[2..], &input[1..]));
                }
                Ok(vec![ks[0], self.mode.output_extent(*h, ks[2]), self.mode.output_extent(*w, ks[3])])
            }
            _ => Err(Error::mismatch("conv2d", &[ks[1], 0, 0], input)),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.kernels).chain(self.bias.as_ref()).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.kernels).chain(self.bias.as_mut()).collect()
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut out = conv_forward_batch(x, &self.kernels.value, self.mode)?;
        if let Some(b) = &self.bias {
            let plane = out.shape()[2] * out.shape()[3];
            let t = self.out_channels();
            for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let bv = b.value.data()[i % t];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv backward called before forward".into()))?;
        let (gi, gk) = conv_backward_batch(x, &self.kernels.value, upstream, self.mode, need_input)?;
        self.kernels.grad = gk;
        if let Some(b) = &mut self.bias {
            let plane = upstream.shape()[2] * upstream.shape()[3];
            let t = b.value.len();
            let g = b.grad.data_mut();
            g.fill(0.0);
            for (i, chunk) in upstream.data().chunks(plane).enumerate() {
                g[i % t] += chunk.iter().sum::<f64>();
            }
        }
        Ok(gi)
    }
}
