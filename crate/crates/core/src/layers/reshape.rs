use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major flatten of a `c x h x w` map stack into `1 x (c*h*w)`.
pub fn flatten(x: &Tensor) -> Tensor {
    let n = x.len();
    x.clone().reshape(&[1, n]).expect("element count preserved")
}

/// Changes the per-sample shape without touching the data (flatten is the
/// one-axis case).
#[derive(Clone, Debug)]
pub struct ReshapeLayer {
    target: Vec<usize>,
    input_shape: Option<Vec<usize>>,
}

impl ReshapeLayer {
    pub fn new(target: Vec<usize>) -> Self {
        ReshapeLayer {
            target,
            input_shape: None,
        }
    }

    /// Flatten any per-sample shape of `n` elements.
    pub fn flatten(n: usize) -> Self {
        Self::new(vec![n])
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        if n != self.target.iter().product::<usize>() {
            return Err(Error::mismatch("reshape", &self.target, input));
        }
        Ok(self.target.clone())
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward_owned(x.clone())
    }

    pub(crate) fn forward_owned(&mut self, x: Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        self.input_shape = Some(x.shape().to_vec());
        let shape: Vec<usize> = std::iter::once(b).chain(self.target.iter().copied()).collect();
        x.reshape(&shape)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.backward_owned(upstream.clone())
    }

    pub(crate) fn backward_owned(&mut self, upstream: Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::State("reshape backward called before forward".into()))?;
        upstream.reshape(shape)
    }
}
