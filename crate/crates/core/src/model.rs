//! Sequential models.

use crate::error::{Error, Result};
use crate::layers::{DenseLayer, Layer, Param, Phase};
use crate::loss::argmax_rows;
use crate::nsfold::{fused_dense_backward, fused_dense_forward, NsLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A chain of layers ending in class logits. Inputs are batches
/// `B x input_shape`.
#[derive(Clone, Debug)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl Model {
    /// Checks that every layer accepts the per-sample shape produced by the
    /// one before it.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        if shapes.last().expect("non-empty").len() != 1 {
            return Err(Error::Config(format!(
                "model must end in a vector of logits, got per-sample shape {:?}",
                shapes.last()
            )));
        }
        Ok(Model {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Number of classes (length of the logit vector).
    pub fn classes(&self) -> usize {
        self.shapes.last().expect("non-empty")[0]
    }

    /// Per-sample shape after each layer, starting with the input shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn ns_layers(&self) -> impl Iterator<Item = &NsLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Ns(ns) => Some(ns),
            _ => None,
        })
    }

    /// Logits for a `B x input_shape` batch.
    pub fn forward(&mut self, x: &Tensor, phase: Phase, rng: &mut Rng) -> Result<Tensor> {
        let per: usize = self.input_shape.iter().product();
        if x.shape()[1..] != self.input_shape[..] && x.shape()[0] * per == x.len() {
            // any layout with the right per-sample element count, e.g. a flat row
            let shape: Vec<usize> = std::iter::once(x.shape()[0]).chain(self.input_shape.iter().copied()).collect();
            return self.forward(&x.clone().reshape(&shape)?, phase, rng);
        }
        if x.shape()[1..] != self.input_shape[..] {
            let expected: Vec<usize> = std::iter::once(x.shape()[0]).chain(self.input_shape.iter().copied()).collect();
            return Err(Error::mismatch("model input", &expected, x.shape()));
        }
        let mut h = x.clone();
        let mut i = 0;
        while i < self.layers.len() {
            if self.fused_at(i) {
                let (ns, dense) = self.fused_pair(i);
                h = fused_dense_forward(ns, dense, &h)?;
                i += 2;
            } else {
                h = self.layers[i].forward_owned(h, phase, rng)?;
                i += 1;
            }
        }
        Ok(h)
    }

    /// An NS layer at `i` feeding straight into a dense layer runs as one
    /// fused step.
    fn fused_at(&self, i: usize) -> bool {
        matches!(
            (self.layers.get(i), self.layers.get(i + 1)),
            (Some(Layer::Ns(_)), Some(Layer::Dense(_)))
        )
    }

    fn fused_pair(&mut self, i: usize) -> (&mut NsLayer, &mut DenseLayer) {
        match &mut self.layers[i..i + 2] {
            [Layer::Ns(ns), Layer::Dense(dense)] => (ns, dense),
            _ => unreachable!("checked by fused_at"),
        }
    }

    /// Backpropagates the logit gradient through every layer, leaving each
    /// parameter's gradient in its [`Param`]. The gradient with respect to
    /// the model input is not computed.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let mut g = grad_logits.clone();
        let mut i = self.layers.len();
        while i > 0 {
            i -= 1;
            if i > 0 && self.fused_at(i - 1) {
                let (ns, dense) = self.fused_pair(i - 1);
                g = fused_dense_backward(ns, dense, &g)?;
                i -= 1;
                if i == 0 {
                    break;
                }
                continue;
            }
            match self.layers[i].backward_owned(g, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Parameters paired with the index of the layer that owns them.
    pub fn named_params(&self) -> Vec<(usize, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |p| (i, p)))
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Kink signatures of all piecewise-linear layers from the last forward.
    pub fn kink_signature(&self) -> Vec<Vec<usize>> {
        self.layers.iter().filter_map(|l| l.kink_signature()).collect()
    }

    /// Predicted classes in evaluation mode, `batch` samples at a time.
    pub fn predict(&mut self, images: &[f64], batch: usize) -> Result<Vec<usize>> {
        let per: usize = self.input_shape.iter().product();
        if images.len() % per != 0 {
            return Err(Error::Length {
                what: "image buffer".into(),
                expected: images.len() / per * per,
                actual: images.len(),
            });
        }
        let mut rng = crate::rng::seeded(0);
        let mut out = Vec::with_capacity(images.len() / per);
        for chunk in images.chunks(batch.max(1) * per) {
            let n = chunk.len() / per;
            let shape: Vec<usize> = std::iter::once(n).chain(self.input_shape.iter().copied()).collect();
            let logits = self.forward(&Tensor::new(shape, chunk.to_vec())?, Phase::Eval, &mut rng)?;
            out.extend(argmax_rows(&logits));
        }
        Ok(out)
    }
}
