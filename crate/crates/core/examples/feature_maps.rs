//! Exports the raw, superposed and replicated feature maps of a LeNet-5
//! with 2-fold superposition for one synthetic digit-like image.

use nsfold::config::{build_network, NetworkConfig, Preset};
use nsfold::features::export_feature_maps;
use nsfold::nsfold::NsMode;
use nsfold::rng::seeded;

fn main() -> nsfold::error::Result<()> {
    let cfg = NetworkConfig::preset(Preset::LeNet5).with_ns(2, NsMode::Fixed, Some(0.5));
    let mut model = build_network(&cfg, &mut seeded(0))?;
    // a ring, roughly a zero
    let image: Vec<f64> = (0..784)
        .map(|p| {
            let (y, x) = ((p / 28) as f64 - 13.5, (p % 28) as f64 - 13.5);
            let r = (x * x / 36.0 + y * y / 81.0).sqrt();
            if (0.7..1.0).contains(&r) { 1.0 } else { 0.0 }
        })
        .collect();
    let dir = std::env::temp_dir().join("nsfold_feature_maps");
    let files = export_feature_maps(&mut model, &image, &dir, None)?;
    println!("wrote {} PGM files to {}", files.len(), dir.display());
    for f in files.iter().take(4) {
        println!("  {}", f.display());
    }
    Ok(())
}
