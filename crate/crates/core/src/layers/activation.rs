use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(upstream: &Tensor, x: &Tensor) -> Result<Tensor> {
    if upstream.len() != x.len() {
        return Err(Error::mismatch("relu backward", x.shape(), upstream.shape()));
    }
    let mut g = upstream.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, Default)]
pub struct ReluLayer {
    /// `x > 0` per element of the last forward input.
    mask: Option<Vec<bool>>,
}

impl ReluLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Tensor {
        self.forward_owned(x.clone())
    }

    /// Clamps `x` in place.
    pub(crate) fn forward_owned(&mut self, mut x: Tensor) -> Tensor {
        let mut mask = self.mask.take().unwrap_or_default();
        mask.clear();
        mask.extend(x.data_mut().iter_mut().map(|v| {
            let pos = *v > 0.0;
            if !pos {
                *v = 0.0;
            }
            pos
        }));
        self.mask = Some(mask);
        x
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.backward_owned(upstream.clone())
    }

    pub(crate) fn backward_owned(&mut self, mut upstream: Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::State("relu backward called before forward".into()))?;
        if mask.len() != upstream.len() {
            return Err(Error::mismatch("relu backward", &[mask.len()], upstream.shape()));
        }
        for (g, &m) in upstream.data_mut().iter_mut().zip(mask) {
            if !m {
                *g = 0.0;
            }
        }
        Ok(upstream)
    }

    pub(crate) fn signature(&self) -> Option<Vec<usize>> {
        self.mask.as_ref().map(|m| m.iter().map(|&p| usize::from(p)).collect())
    }
}
