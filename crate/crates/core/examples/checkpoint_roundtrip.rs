//! Saves a LeNet-5 with trainable 4-fold superposition, reloads it from the
//! sidecar config and confirms the logits match bit for bit.

use nsfold::checkpoint::{load_checkpoint, manifest, save_checkpoint};
use nsfold::config::{build_network, NetworkConfig, Preset};
use nsfold::layers::Phase;
use nsfold::nsfold::NsMode;
use nsfold::rng::{self, seeded, Stream};
use nsfold::tensor::Tensor;

fn main() -> nsfold::error::Result<()> {
    let cfg = NetworkConfig::preset(Preset::LeNet5).with_ns(4, NsMode::Trainable, None);
    let seed = 7;
    let mut model = build_network(&cfg, &mut rng::stream(seed, Stream::Init))?;
    for entry in manifest(&model) {
        let shapes: Vec<_> = entry.params.iter().map(|p| format!("{} {:?}", p.name, p.shape)).collect();
        println!("layer {:>2} {:<8} {}", entry.layer, entry.kind, shapes.join(", "));
    }
    let path = std::env::temp_dir().join("nsfold_lenet.ckpt");
    save_checkpoint(&model, &cfg, seed, &path)?;
    let (mut back, sidecar) = load_checkpoint(&path)?;
    let x = Tensor::uniform(&[10, 1, 28, 28], 0.0, 1.0, &mut seeded(3));
    let a = model.forward(&x, Phase::Eval, &mut seeded(0))?;
    let b = back.forward(&x, Phase::Eval, &mut seeded(0))?;
    let same = a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
    println!("{} (seed {}): logits bit-identical after reload: {same}", path.display(), sidecar.seed);
    Ok(())
}
