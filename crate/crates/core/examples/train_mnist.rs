//! Short SimpleCNN training on MNIST with and without 2-fold superposition.
//!
//! Reads `$NSFOLD_DATA_DIR/mnist` (or `./data/mnist`). Arguments: training
//! images and epochs, default 2000 and 2.

use nsfold::config::{NetworkConfig, Preset};
use nsfold::data::load_dataset;
use nsfold::nsfold::NsMode;
use nsfold::train::run_experiment;

fn main() -> nsfold::error::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let subset = args.first().copied().unwrap_or(2000);
    let epochs = args.get(1).copied().unwrap_or(2);

    let mut base = NetworkConfig::preset(Preset::SimpleCnn);
    base.name = "simple_cnn".into();
    base.train_subset = Some(subset);
    base.epochs = Some(epochs);
    base.repeats = 1;
    let (train, test) = load_dataset(&base.data)?;
    let test = test.take(2000);
    let ns = NetworkConfig {
        name: "simple_cnn_fns2".into(),
        ..base.clone().with_ns(2, NsMode::Fixed, Some(0.25))
    };
    for cfg in [&base, &ns] {
        let r = run_experiment(cfg, &train, &test, true)?;
        println!("{}: {} ({} parameters, {:.0} s)\n", cfg.name, r.table_cell(), r.param_count, r.wall_secs);
    }
    Ok(())
}
