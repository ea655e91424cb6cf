use rand::Rng as _;

use super::Phase;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout: at train time each unit survives with probability
/// `keep_rate` and is scaled by `1 / keep_rate`; at eval time the layer is
/// the identity.
#[derive(Clone, Debug)]
pub struct DropoutLayer {
    keep_rate: f64,
    /// Scaled mask of the last train-mode forward (`0` or `1/keep_rate`).
    mask: Option<Tensor>,
    /// When set, train-mode forwards reuse the cached mask.
    frozen: bool,
    last_phase: Phase,
}

impl DropoutLayer {
    pub fn new(keep_rate: f64) -> Result<Self> {
        if !(keep_rate > 0.0 && keep_rate <= 1.0) {
            return Err(Error::Config(format!("dropout keep_rate must be in (0, 1], got {keep_rate}")));
        }
        Ok(DropoutLayer {
            keep_rate,
            mask: None,
            frozen: false,
            last_phase: Phase::Eval,
        })
    }

    pub fn keep_rate(&self) -> f64 {
        self.keep_rate
    }

    /// Freezes (or releases) the current mask. A frozen layer is
    /// deterministic in train mode, which the gradient audit needs.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.backward_owned(upstream.clone())
    }

    pub(crate) fn backward_owned(&mut self, upstream: Tensor) -> Result<Tensor> {
        match (self.last_phase, &self.mask) {
            (Phase::Eval, _) => Ok(upstream),
            (Phase::Train, Some(mask)) if mask.len() == upstream.len() => {
                let mut g = upstream;
                for (gv, m) in g.data_mut().iter_mut().zip(mask.data()) {
                    *gv *= m;
                }
                Ok(g)
            }
            (Phase::Train, Some(mask)) => Err(Error::mismatch("dropout backward", mask.shape(), upstream.shape())),
            (Phase::Train, None) => Err(Error::State("dropout backward called before forward".into())),
        }
    }
}

/// Applies dropout according to `phase`. Train mode draws a fresh mask from
/// `rng` unless the layer is frozen with a mask of matching shape.
pub fn dropout_forward(x: &Tensor, layer: &mut DropoutLayer, phase: Phase, rng: &mut Rng) -> Result<Tensor> {
    dropout_forward_owned(x.clone(), layer, phase, rng)
}

pub(crate) fn dropout_forward_owned(x: Tensor, layer: &mut DropoutLayer, phase: Phase, rng: &mut Rng) -> Result<Tensor> {
    layer.last_phase = phase;
    if phase == Phase::Eval {
        return Ok(x);
    }
    let reuse = layer.frozen && layer.mask.as_ref().is_some_and(|m| m.shape() == x.shape());
    if !reuse {
        let keep = layer.keep_rate;
        let scale = 1.0 / keep;
        let mut mask = Tensor::zeros(x.shape());
        if keep == 1.0 {
            mask.data_mut().fill(1.0);
        } else {
            for m in mask.data_mut() {
                *m = if rng.random::<f64>() < keep { scale } else { 0.0 };
            }
        }
        layer.mask = Some(mask);
    }
    let mask = layer.mask.as_ref().expect("mask present");
    let mut out = x;
    for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn eval_mode_is_identity() {
        let mut rng = seeded(1);
        let x = Tensor::randn(&[4, 9], 1.0, &mut rng);
        let mut l = DropoutLayer::new(0.5).unwrap();
        assert_eq!(dropout_forward(&x, &mut l, Phase::Eval, &mut rng).unwrap(), x);
    }

    #[test]
    fn keep_rate_one_is_identity() {
        let mut rng = seeded(2);
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let mut l = DropoutLayer::new(1.0).unwrap();
        assert_eq!(dropout_forward(&x, &mut l, Phase::Train, &mut rng).unwrap(), x);
    }

    #[test]
    fn rejects_out_of_range_keep_rate() {
        assert!(matches!(DropoutLayer::new(0.0), Err(Error::Config(_))));
        assert!(matches!(DropoutLayer::new(1.5), Err(Error::Config(_))));
    }

    #[test]
    fn half_keep_rate_statistics() {
        let mut rng = seeded(3);
        let x = Tensor::filled(&[1, 100_000], 0.7);
        let mut l = DropoutLayer::new(0.5).unwrap();
        let y = dropout_forward(&x, &mut l, Phase::Train, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((0.49..=0.51).contains(&kept), "kept fraction {kept}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.4));
        let mean = y.sum() / 1e5;
        assert!((mean - 0.7).abs() < 0.007, "mean {mean}");
    }

    #[test]
    fn frozen_mask_is_reused() {
        let mut rng = seeded(4);
        let x = Tensor::randn(&[2, 50], 1.0, &mut rng);
        let mut l = DropoutLayer::new(0.5).unwrap();
        let a = dropout_forward(&x, &mut l, Phase::Train, &mut rng).unwrap();
        l.set_frozen(true);
        let b = dropout_forward(&x, &mut l, Phase::Train, &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
