use super::Param;
use crate::error::{Error, Result};

/// Adds `lambda * sum(w^2)` over weights and kernels to the loss and
/// `2 * lambda * w` to their gradients. Biases and NS coefficients are left
/// alone. Returns the loss term.
pub fn l2_penalty(params: &mut [&mut Param], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("l2 lambda must be a finite value >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mut term = 0.0;
    for p in params.iter_mut().filter(|p| p.kind.decays()) {
        let Param { value, grad, .. } = &mut **p;
        for (g, &w) in grad.data_mut().iter_mut().zip(value.data()) {
            term += w * w;
            *g += 2.0 * lambda * w;
        }
    }
    Ok(lambda * term)
}
