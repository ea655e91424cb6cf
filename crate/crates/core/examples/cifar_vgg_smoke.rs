//! VGG-11 with trainable 2-fold superposition on CIFAR-10 shaped data:
//! writes a synthetic binary batch, loads it back through the CIFAR reader
//! and trains one epoch on it. Real data is used instead when
//! `$NSFOLD_DATA_DIR/cifar-10-batches-bin` exists.

use nsfold::config::{DatasetKind, NetworkConfig, Preset};
use nsfold::data::{load_cifar10, load_dataset, write_cifar10, Dataset};
use nsfold::nsfold::NsMode;
use nsfold::rng::seeded;
use nsfold::train::run_experiment;
use rand::Rng;

fn synthetic(n: usize, seed: u64) -> nsfold::error::Result<Dataset> {
    let mut rng = seeded(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let images = (0..n * 3072).map(|_| rng.random_range(0..=255u8) as f64 / 255.0).collect();
    Dataset::new("cifar-synthetic", images, labels, (3, 32, 32))
}

fn main() -> nsfold::error::Result<()> {
    let mut cfg = NetworkConfig::preset(Preset::Vgg11).with_ns(2, NsMode::Trainable, None);
    cfg.name = "vgg11_tns2_smoke".into();
    cfg.data.kind = DatasetKind::Cifar10;
    cfg.train_subset = Some(40);
    cfg.epochs = Some(1);
    cfg.repeats = 1;
    cfg.batch_size = 20;

    let (train, test) = if cfg.data.resolved_dir().is_dir() {
        let (train, test) = load_dataset(&cfg.data)?;
        (train, test.take(40))
    } else {
        let dir = std::env::temp_dir().join("nsfold_cifar_smoke");
        std::fs::create_dir_all(&dir).map_err(|e| nsfold::error::Error::Io { path: Some(dir.clone()), source: e })?;
        let (a, b) = (dir.join("data_batch_1.bin"), dir.join("test_batch.bin"));
        write_cifar10(&synthetic(40, 1)?, &a)?;
        write_cifar10(&synthetic(20, 2)?, &b)?;
        (load_cifar10(&[a])?, load_cifar10(&[b])?)
    };
    println!("train {} images, test {} images, {:?}", train.len(), test.len(), train.shape());
    let r = run_experiment(&cfg, &train, &test, true)?;
    println!("{}: {} parameters, {} after one epoch, {:.0} s", cfg.name, r.param_count, r.table_cell(), r.wall_secs);
    Ok(())
}
