//! Softmax cross-entropy.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before the logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

static CLAMPS: AtomicUsize = AtomicUsize::new(0);

/// How many times `cross_entropy` has clamped a zero probability in this
/// process.
pub fn clamp_count() -> usize {
    CLAMPS.load(Ordering::Relaxed)
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax of a `B x c` (or `1 x c`) logit tensor, stabilized by
/// subtracting each row's maximum.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = *logits.shape().last().expect("tensors have at least one axis");
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
        softmax_row(src, dst);
    }
    out
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Index {
            what: "class label",
            index: label,
            len: classes,
        });
    }
    Ok(())
}

fn neg_log(p: f64) -> f64 {
    if p < PROB_FLOOR {
        CLAMPS.fetch_add(1, Ordering::Relaxed);
        eprintln!("warning: probability {p:e} clamped to {PROB_FLOOR:e} before log");
        -PROB_FLOOR.ln()
    } else {
        -p.ln()
    }
}

/// `-ln(probs[label])` for one `1 x c` probability row.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    check_label(label, probs.len())?;
    Ok(neg_log(probs.data()[label]))
}

/// Gradient of `cross_entropy(softmax(logits), label)` with respect to the
/// logits: `softmax(logits) - onehot(label)`.
pub fn softmax_ce_grad(logits: &Tensor, label: usize) -> Result<Tensor> {
    check_label(label, logits.len())?;
    let mut g = softmax(logits);
    g.data_mut()[label] -= 1.0;
    Ok(g)
}

/// Mean softmax cross-entropy over a batch, caching probabilities for the
/// gradient.
#[derive(Clone, Debug)]
pub struct SoftmaxCE {
    classes: usize,
    cache: Option<(Tensor, Vec<usize>)>,
}

impl SoftmaxCE {
    pub fn new(classes: usize) -> Self {
        SoftmaxCE { classes, cache: None }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Probabilities of the last `forward`.
    pub fn probs(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|(p, _)| p)
    }

    /// Mean loss of `B x c` logits against `B` labels.
    pub fn forward(&mut self, logits: &Tensor, labels: &[usize]) -> Result<f64> {
        let c = self.classes;
        if logits.len() != labels.len() * c {
            return Err(Error::mismatch("softmax_ce", &[labels.len(), c], logits.shape()));
        }
        let probs = softmax(&logits.clone().reshape(&[labels.len(), c])?);
        let mut total = 0.0;
        for (row, &label) in probs.data().chunks(c).zip(labels) {
            check_label(label, c)?;
            total += neg_log(row[label]);
        }
        self.cache = Some((probs, labels.to_vec()));
        Ok(total / labels.len() as f64)
    }

    /// Gradient of the mean loss with respect to the logits:
    /// `(p - onehot) / B`.
    pub fn backward(&self) -> Result<Tensor> {
        let (probs, labels) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("loss backward called before forward".into()))?;
        let scale = 1.0 / labels.len() as f64;
        let mut g = probs.clone();
        for (row, &label) in g.data_mut().chunks_mut(self.classes).zip(labels) {
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        Ok(g)
    }
}

/// Index of the largest entry of each row (first one on ties).
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let c = *scores.shape().last().expect("tensors have at least one axis");
    scores
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
