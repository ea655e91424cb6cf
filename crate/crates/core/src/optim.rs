//! SGD and Adam.
//!
//! Both read the gradient stored in each [`Param`] and update its value in
//! place. Adam keeps one pair of moment buffers per parameter tensor, matched
//! to parameters by position, so the same parameter list order must be passed
//! on every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig::Sgd { learning_rate }
    }

    /// Adam with the usual defaults (0.9, 0.999, 1e-8).
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { learning_rate } | OptimizerConfig::Adam { learning_rate, .. } => learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { learning_rate } => learning_rate > 0.0 && learning_rate.is_finite(),
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                learning_rate > 0.0
                    && learning_rate.is_finite()
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter using its stored gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        match self.config {
            OptimizerConfig::Sgd { .. } => sgd_step(params, self),
            OptimizerConfig::Adam { .. } => adam_step(params, self),
        }
    }
}

fn check_grads(params: &[&mut Param]) -> Result<()> {
    for p in params {
        if p.grad.shape() != p.value.shape() {
            return Err(Error::mismatch("optimizer", p.value.shape(), p.grad.shape()));
        }
    }
    Ok(())
}

/// `p <- p - lr * g`.
pub fn sgd_step(params: &mut [&mut Param], state: &mut OptimizerState) -> Result<()> {
    check_grads(params)?;
    let lr = state.config.learning_rate();
    for p in params.iter_mut() {
        let Param { value, grad, .. } = &mut **p;
        for (v, &g) in value.data_mut().iter_mut().zip(grad.data()) {
            *v -= lr * g;
        }
    }
    state.steps += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Param], state: &mut OptimizerState) -> Result<()> {
    let OptimizerConfig::Adam {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config
    else {
        return Err(Error::Config("adam_step needs an Adam configuration".into()));
    };
    check_grads(params)?;
    if state.first.is_empty() {
        state.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} tensors but got {}",
            state.first.len(),
            params.len()
        )));
    }
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        if m.shape() != p.value.shape() {
            return Err(Error::mismatch("adam moments", m.shape(), p.value.shape()));
        }
        let Param { value, grad, .. } = &mut **p;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamKind;

    fn scalar(v: f64, g: f64) -> Param {
        let mut p = Param::new("w", ParamKind::Weight, Tensor::row(&[v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn sgd_single_step() {
        let mut p = scalar(1.0, 2.0);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1)).unwrap();
        s.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.8).abs() < 1e-15);
        let mut q = scalar(1.0, 0.0);
        s.step(&mut [&mut q]).unwrap();
        assert_eq!(q.value.data()[0], 1.0);
        assert_eq!(s.steps(), 2);
    }

    #[test]
    fn sgd_three_step_recurrence() {
        // loss p^2, gradient 2p: p <- p (1 - 2 lr)
        let mut p = scalar(1.0, 2.0);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1)).unwrap();
        for _ in 0..3 {
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            s.step(&mut [&mut p]).unwrap();
        }
        assert!((p.value.data()[0] - 0.8f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = scalar(0.5, 0.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(1e-3)).unwrap();
        for _ in 0..3 {
            s.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut p = scalar(0.0, g);
            let mut s = OptimizerState::new(OptimizerConfig::adam(1e-3)).unwrap();
            s.step(&mut [&mut p]).unwrap();
            let step = p.value.data()[0];
            assert!((step.abs() - 1e-3).abs() < 1e-8, "{step}");
            assert_eq!(step.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_three_step_hand_recurrence() {
        let grads = [1.0, -2.0, 0.5];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut p = scalar(1.0, 0.0);
        let mut s = OptimizerState::new(OptimizerConfig::adam(lr)).unwrap();
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            p.grad.data_mut()[0] = g;
            s.step(&mut [&mut p]).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let t = (i + 1) as i32;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            assert!((p.value.data()[0] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_same_gradients() {
        let run = || {
            let mut p = scalar(0.3, 0.0);
            let mut s = OptimizerState::new(OptimizerConfig::adam(0.05)).unwrap();
            for k in 0..10 {
                p.grad.data_mut()[0] = (k as f64).sin();
                s.step(&mut [&mut p]).unwrap();
            }
            p.value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn rejects_bad_settings_and_shapes() {
        assert!(OptimizerState::new(OptimizerConfig::sgd(-1.0)).is_err());
        let mut p = scalar(1.0, 1.0);
        p.grad = Tensor::zeros(&[2]);
        let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1)).unwrap();
        assert!(matches!(s.step(&mut [&mut p]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn config_json_defaults() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"adam","learning_rate":0.001}"#).unwrap();
        assert_eq!(c, OptimizerConfig::adam(1e-3));
    }
}
