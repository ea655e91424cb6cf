//! Superposing noisy copies of one pattern: measured noise ratio against the
//! expected sum of squared normalized coefficients, and PGM dumps of one copy
//! and the superposed map.

use nsfold::features::{noise_metric, noise_metric_with_signal, superpose, write_pgm};
use nsfold::rng::seeded;
use nsfold::tensor::Tensor;

fn main() -> nsfold::error::Result<()> {
    let (h, w): (usize, usize) = (64, 64);
    let signal: Vec<f64> = (0..h * w)
        .map(|p| if (p / w).abs_diff(32) < 12 && (p % w).abs_diff(32) < 12 { 1.0 } else { 0.0 })
        .collect();
    let mut rng = seeded(1);
    for beta in [vec![0.25; 4], vec![0.4, 0.3, 0.2, 0.1], vec![1.0, 0.0]] {
        let noise = Tensor::randn(&[beta.len(), h * w], 0.4, &mut rng);
        let copies: Vec<Vec<f64>> = (0..beta.len())
            .map(|r| signal.iter().zip(noise.sample(r)).map(|(s, e)| s + e).collect())
            .collect();
        let total: f64 = beta.iter().sum();
        let expected: f64 = beta.iter().map(|b| (b / total).powi(2)).sum();
        let est = noise_metric(&copies, &beta)?;
        let known = noise_metric_with_signal(&copies, &signal, &beta)?;
        println!(
            "beta {beta:?}: expected {expected:.4}, estimated {:.4}, with known signal {:.4}",
            est.variance_ratio, known.variance_ratio
        );
        if beta.len() == 4 && beta[0] == 0.25 {
            let dir = std::env::temp_dir().join("nsfold_noise");
            std::fs::create_dir_all(&dir).map_err(|e| nsfold::error::Error::Io { path: Some(dir.clone()), source: e })?;
            write_pgm(&dir.join("copy0.pgm"), w, h, &copies[0])?;
            write_pgm(&dir.join("superposed.pgm"), w, h, &superpose(&copies, &beta)?)?;
            println!("  wrote copy0.pgm and superposed.pgm to {}", dir.display());
        }
    }
    Ok(())
}
