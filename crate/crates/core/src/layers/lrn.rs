use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cross-channel local response normalization:
/// `y_i = x_i / (k + alpha * sum_{j in window(i)} x_j^2)^beta`, where the
/// window covers `size / 2` channels on each side of `i`, clipped at the
/// channel boundaries.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrnLayer {
    pub size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip)]
    cache: Option<Tensor>,
}

impl Default for LrnLayer {
    /// The AlexNet constants: `size = 5, k = 2, alpha = 1e-4, beta = 0.75`.
    fn default() -> Self {
        LrnLayer::new(5, 2.0, 1e-4, 0.75)
    }
}

impl LrnLayer {
    pub fn new(size: usize, k: f64, alpha: f64, beta: f64) -> Self {
        LrnLayer {
            size,
            k,
            alpha,
            beta,
            cache: None,
        }
    }

    fn radius(&self) -> usize {
        self.size / 2
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = lrn_forward(x, self)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("lrn backward called before forward".into()))?;
        lrn_backward(upstream, x, self)
    }
}

/// (number of channel stacks, channels, pixels per channel)
fn layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    let nd = x.ndim();
    if nd < 3 {
        return Err(Error::InvalidShape {
            op: "lrn",
            shape: x.shape().to_vec(),
            reason: "expected c x h x w or B x c x h x w".into(),
        });
    }
    let c = x.shape()[nd - 3];
    let plane = x.shape()[nd - 2] * x.shape()[nd - 1];
    Ok((x.len() / (c * plane), c, plane))
}

/// Denominator base `k + alpha * window sum of squares` for every element.
fn denominators(x: &Tensor, layer: &LrnLayer) -> Result<Vec<f64>> {
    let (stacks, c, plane) = layout(x)?;
    let r = layer.radius();
    let xs = x.data();
    let mut d = vec![0.0; x.len()];
    for s in 0..stacks {
        let base = s * c * plane;
        for i in 0..c {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(c - 1);
            for p in 0..plane {
                let mut acc = 0.0;
                for j in lo..=hi {
                    let v = xs[base + j * plane + p];
                    acc += v * v;
                }
                d[base + i * plane + p] = layer.k + layer.alpha * acc;
            }
        }
    }
    Ok(d)
}

pub fn lrn_forward(x: &Tensor, layer: &LrnLayer) -> Result<Tensor> {
    let d = denominators(x, layer)?;
    let mut y = x.clone();
    for (v, dv) in y.data_mut().iter_mut().zip(&d) {
        *v /= dv.powf(layer.beta);
    }
    Ok(y)
}

/// `g_j = u_j D_j^-beta - 2 alpha beta x_j sum_{i : j in window(i)} u_i x_i D_i^(-beta-1)`.
pub fn lrn_backward(upstream: &Tensor, x: &Tensor, layer: &LrnLayer) -> Result<Tensor> {
    if upstream.shape() != x.shape() {
        return Err(Error::mismatch("lrn backward", x.shape(), upstream.shape()));
    }
    let (stacks, c, plane) = layout(x)?;
    let d = denominators(x, layer)?;
    let r = layer.radius();
    let (xs, us) = (x.data(), upstream.data());
    // w_i = u_i x_i D_i^(-beta-1)
    let w: Vec<f64> = (0..x.len())
        .map(|i| us[i] * xs[i] * d[i].powf(-layer.beta - 1.0))
        .collect();
    let mut g = Tensor::zeros(x.shape());
    let gd = g.data_mut();
    let coef = 2.0 * layer.alpha * layer.beta;
    for s in 0..stacks {
        let base = s * c * plane;
        for j in 0..c {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(c - 1);
            for p in 0..plane {
                let idx = base + j * plane + p;
                let mut acc = 0.0;
                for i in lo..=hi {
                    acc += w[base + i * plane + p];
                }
                gd[idx] = us[idx] * d[idx].powf(-layer.beta) - coef * xs[idx] * acc;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_alpha_is_a_constant_rescale() {
        let x = Tensor::randn(&[3, 2, 2], 1.0, &mut seeded(1));
        let l = LrnLayer::new(5, 2.0, 0.0, 0.75);
        let y = lrn_forward(&x, &l).unwrap();
        let want = x.scale(1.0 / 2f64.powf(0.75));
        assert!(y.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn single_channel_scalar_formula() {
        let x = Tensor::new(vec![1, 1, 3], vec![0.5, -2.0, 3.0]).unwrap();
        let l = LrnLayer::new(5, 2.0, 0.1, 0.75);
        let y = lrn_forward(&x, &l).unwrap();
        for (yv, xv) in y.data().iter().zip(x.data()) {
            let want = xv / (2.0 + 0.1 * xv * xv).powf(0.75);
            assert!((yv - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let y = lrn_forward(&Tensor::zeros(&[2, 4, 3, 3]), &LrnLayer::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn never_amplifies_when_k_at_least_one() {
        let x = Tensor::randn(&[2, 7, 3, 3], 5.0, &mut seeded(2));
        let l = LrnLayer::new(5, 1.0, 0.3, 0.5);
        let y = lrn_forward(&x, &l).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.abs() <= b.abs()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(3);
        let x = Tensor::randn(&[2, 6, 2, 2], 1.5, &mut rng);
        let c = Tensor::randn(&[2, 6, 2, 2], 1.0, &mut rng);
        let l = LrnLayer::new(3, 1.0, 0.2, 0.75);
        let g = lrn_backward(&c, &x, &l).unwrap();
        let eps = 1e-5;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let fd = (lrn_forward(&p, &l).unwrap().dot(&c) - lrn_forward(&m, &l).unwrap().dot(&c)) / (2.0 * eps);
            let a = g.data()[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-6, "{i}: {a} vs {fd}");
        }
    }
}
