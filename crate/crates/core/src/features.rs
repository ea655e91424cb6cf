//! Feature-map export (binary PGM) and the superposition noise metric.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::layers::{Layer, Phase};
use crate::model::Model;
use crate::nsfold::{NsLayer, NsMode};
use crate::rng;
use crate::tensor::Tensor;

/// 8-bit binary PGM (P5) of a `height x width` plane, min-max scaled to
/// 0..255. A constant plane maps to 128.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::mismatch("pgm", &[height, width], &[values.len()]));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let bytes = pgm_bytes(width, height, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `sum_r beta_r * copies[r]`, pixel by pixel.
pub fn superpose(copies: &[Vec<f64>], beta: &[f64]) -> Result<Vec<f64>> {
    check_copies(copies, beta)?;
    let mut out = vec![0.0; copies[0].len()];
    for (c, &b) in copies.iter().zip(beta) {
        out.iter_mut().zip(c).for_each(|(o, v)| *o += b * v);
    }
    Ok(out)
}

fn check_copies(copies: &[Vec<f64>], beta: &[f64]) -> Result<()> {
    if copies.len() < 2 {
        return Err(Error::Config(format!("need at least 2 maps per position, got {}", copies.len())));
    }
    if beta.len() != copies.len() {
        return Err(Error::mismatch("noise metric", &[copies.len()], &[beta.len()]));
    }
    let p = copies[0].len();
    if p == 0 || copies.iter().any(|c| c.len() != p) {
        return Err(Error::Config("maps must be non-empty and of equal size".into()));
    }
    let total: f64 = beta.iter().sum();
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::Config("coefficients must have a finite nonzero sum".into()));
    }
    Ok(())
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct NoiseReport {
    /// Estimated per-pixel noise variance of one input map.
    pub input_variance: f64,
    /// Estimated noise variance of the superposed map (coefficients
    /// normalized to sum 1).
    pub superposed_variance: f64,
    /// `superposed_variance / input_variance`; 0 when the inputs carry no
    /// noise.
    pub variance_ratio: f64,
}

/// Noise reduction of superposing `N` maps that share one signal.
///
/// Each copy is modelled as `S + e_r` with independent zero-mean noise of a
/// common variance. With coefficients normalized to `b_r = beta_r / sum
/// beta`, the noise variance of the superposed map is `sigma^2 sum b_r^2`.
/// `sigma^2` is estimated from pairwise differences
/// (`E (F_i - F_j)^2 = 2 sigma^2`), and the superposed noise from the
/// residuals `M - F_j`, whose mean square has expectation
/// `sigma^2 (sum b_r^2 + 1 - 2/N)`. Neither estimate needs the signal.
/// With equal coefficients both are the same sum of squared pairwise
/// differences, so the ratio is exactly `1/N` whatever the data; use
/// [`noise_metric_with_signal`] when the signal is known.
pub fn noise_metric(copies: &[Vec<f64>], beta: &[f64]) -> Result<NoiseReport> {
    check_copies(copies, beta)?;
    let n = copies.len();
    let total: f64 = beta.iter().sum();
    let norm: Vec<f64> = beta.iter().map(|b| b / total).collect();
    let mut pair_sum = 0.0;
    let mut pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            pair_sum += mean_sq_diff(&copies[i], &copies[j]);
            pairs += 1;
        }
    }
    let sigma2 = pair_sum / pairs as f64 / 2.0;
    if sigma2 == 0.0 {
        return Ok(NoiseReport {
            input_variance: 0.0,
            superposed_variance: 0.0,
            variance_ratio: 0.0,
        });
    }
    let m = superpose(copies, &norm)?;
    let resid = copies.iter().map(|c| mean_sq_diff(&m, c)).sum::<f64>() / n as f64;
    let superposed = (resid - sigma2 * (1.0 - 2.0 / n as f64)).max(0.0);
    Ok(NoiseReport {
        input_variance: sigma2,
        superposed_variance: superposed,
        variance_ratio: superposed / sigma2,
    })
}

/// Same ratio when the clean signal is known: mean squared error of the
/// superposed map over that of the inputs.
pub fn noise_metric_with_signal(copies: &[Vec<f64>], signal: &[f64], beta: &[f64]) -> Result<NoiseReport> {
    check_copies(copies, beta)?;
    if signal.len() != copies[0].len() {
        return Err(Error::mismatch("noise metric signal", &[copies[0].len()], &[signal.len()]));
    }
    let total: f64 = beta.iter().sum();
    let norm: Vec<f64> = beta.iter().map(|b| b / total).collect();
    let input = copies.iter().map(|c| mean_sq_diff(c, signal)).sum::<f64>() / copies.len() as f64;
    let superposed = mean_sq_diff(&superpose(copies, &norm)?, signal);
    Ok(NoiseReport {
        input_variance: input,
        superposed_variance: superposed,
        variance_ratio: if input > 0.0 { superposed / input } else { 0.0 },
    })
}

/// Runs `image` through the model and writes, for the map stack entering the
/// NS layer (or leaving the last convolution when the model has no NS
/// layer):
///
/// - `layer{i}_ch{c}_raw.pgm` for every map,
/// - `layer{i}_pos{l}_superposed.pgm` for every superposed position,
/// - `layer{i}_replicated.pgm`, the NS output laid out with one row of maps
///   per copy.
///
/// `beta_override` replaces the model's coefficients (its length sets the
/// fold count when the model has no NS layer). Returns the written paths.
pub fn export_feature_maps(model: &mut Model, image: &[f64], out_dir: &Path, beta_override: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let conv_count = model.layers().iter().filter(|l| matches!(l, Layer::Conv(_))).count();
    if conv_count == 0 {
        return Err(Error::Config("feature-map export needs a model with a convolution layer".into()));
    }
    let ns_at = model.layers().iter().position(|l| matches!(l, Layer::Ns(_)));
    let last_conv = model.layers().iter().rposition(|l| matches!(l, Layer::Conv(_))).expect("counted above");
    // capture the output of `capture` (input of the NS layer when present)
    let capture = match ns_at {
        Some(i) if i > 0 => i - 1,
        _ => last_conv,
    };
    let shape: Vec<usize> = std::iter::once(1).chain(model.input_shape().iter().copied()).collect();
    let mut h = Tensor::new(shape, image.to_vec())?;
    let mut rng = rng::seeded(0);
    for layer in model.layers_mut()[..=capture].iter_mut() {
        h = layer.forward(&h, Phase::Eval, &mut rng)?;
    }
    let maps = h.clone();
    if maps.ndim() != 4 {
        return Err(Error::Config(format!("expected a map stack before NS, got shape {:?}", maps.shape())));
    }
    let (t, hh, ww) = (maps.shape()[1], maps.shape()[2], maps.shape()[3]);
    let beta: Vec<f64> = match (beta_override, ns_at) {
        (Some(b), _) => b.to_vec(),
        (None, Some(i)) => match &model.layers()[i] {
            Layer::Ns(ns) => ns.beta().to_vec(),
            _ => unreachable!("position found an NS layer"),
        },
        (None, None) => {
            return Err(Error::Config("model has no NS layer; pass coefficients to export superposed maps".into()));
        }
    };
    let mut ns = NsLayer::new(t, beta.len(), beta, NsMode::Fixed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plane = hh * ww;
    let mut written = Vec::new();
    let mut put = |name: String, w: usize, h: usize, values: &[f64]| -> Result<()> {
        let path = out_dir.join(name);
        write_pgm(&path, w, h, values)?;
        written.push(path);
        Ok(())
    };
    for c in 0..t {
        put(format!("layer{capture}_ch{c:03}_raw.pgm"), ww, hh, &maps.data()[c * plane..(c + 1) * plane])?;
    }
    let out = ns.forward(&maps)?;
    let s = ns.block_len();
    for l in 0..s {
        put(format!("layer{capture}_pos{l:03}_superposed.pgm"), ww, hh, &out.data()[l * plane..(l + 1) * plane])?;
    }
    // mosaic: N rows (copies) of s maps
    let n = ns.folds();
    let mut mosaic = vec![0.0; n * hh * s * ww];
    for k in 0..n {
        for l in 0..s {
            let src = &out.data()[(k * s + l) * plane..(k * s + l + 1) * plane];
            for r in 0..hh {
                let row = (k * hh + r) * s * ww + l * ww;
                mosaic[row..row + ww].copy_from_slice(&src[r * ww..(r + 1) * ww]);
            }
        }
    }
    put(format!("layer{capture}_replicated.pgm"), s * ww, n * hh, &mosaic)?;
    Ok(written)
}
