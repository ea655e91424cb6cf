use crate::error::{Error, Result};
use crate::tensor::{max_pool2d, max_pool2d_backward, Tensor};

/// 2x2, stride-2 max pooling over `B x c x h x w` activations.
#[derive(Clone, Debug, Default)]
pub struct MaxPoolLayer {
    argmax: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl MaxPoolLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![*c, h / 2, w / 2]),
            _ => Err(Error::InvalidShape {
                op: "max_pool2d",
                shape: input.to_vec(),
                reason: "expected c x h x w with even h and w".into(),
            }),
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let pooled = max_pool2d(x)?;
        self.argmax = pooled.argmax;
        self.input_shape = Some(x.shape().to_vec());
        Ok(pooled.output)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("max_pool backward called before forward".into()))?;
        max_pool2d_backward(upstream, &self.argmax, shape)
    }

    pub(crate) fn signature(&self) -> Option<Vec<usize>> {
        self.input_shape.as_ref().map(|_| self.argmax.clone())
    }
}
