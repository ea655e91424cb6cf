//! Command-line front end. `cli_main` parses arguments, runs one subcommand
//! and returns the process exit code: 0 on success, 1 on validation
//! failures (including failed checks), 2 on I/O and file-format errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{build_network, NetworkConfig, Preset, Profile};
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::features::export_feature_maps;
use crate::gradcheck::{audit_cases, check_model_with, run_audit_suite, CheckOptions};
use crate::layers::Layer;
use crate::minima::compare_minima_spaces;
use crate::nsfold::NsMode;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use crate::train::{evaluate, prepare_data, run_experiment_with, write_outputs};

#[derive(Parser, Debug)]
#[command(name = "nsfold", version, about = "N-fold superposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run repeated training trials from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Full-scale profile: all training images, 100 epochs.
        #[arg(long)]
        full: bool,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Skip writing one checkpoint per trial.
        #[arg(long)]
        no_checkpoints: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Compare backprop gradients with central differences.
    Gradcheck {
        /// A preset name, or `suite` for the small-network suite covering
        /// every layer combination.
        #[arg(long, default_value = "suite")]
        preset: String,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds for the suite (`seed..seed + seeds`).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Coordinates sampled per tensor (presets default to 25, the suite
        /// checks all).
        #[arg(long)]
        coords: Option<usize>,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// Enable NS with this fold count on a preset.
        #[arg(long)]
        ns: Option<usize>,
        #[arg(long, value_parser = parse_mode, default_value = "fixed")]
        ns_mode: NsMode,
        /// Scale the analytic gradient of one tensor: `INDEX:FACTOR`.
        #[arg(long, value_parser = parse_inject)]
        inject: Option<(usize, f64)>,
    },
    /// Verify the enlarged stationary-point space of the toy network.
    MinimaVerify {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        n: usize,
        /// Comma-separated coefficients (one value is repeated N times).
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
    },
    /// Write raw, superposed and replicated feature maps of one image as PGM.
    FmExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        /// Coefficients overriding the model's own.
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// Dataset directory (default: the one in the checkpoint's config).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (default: the one in the checkpoint's config).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<NsMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "fixed" | "fns" => Ok(NsMode::Fixed),
        "trainable" | "tns" => Ok(NsMode::Trainable),
        _ => Err(format!("unknown NS mode {s:?} (fixed or trainable)")),
    }
}

fn parse_inject(s: &str) -> std::result::Result<(usize, f64), String> {
    let (i, f) = s.split_once(':').ok_or("expected INDEX:FACTOR")?;
    Ok((i.parse().map_err(|e| format!("{e}"))?, f.parse().map_err(|e| format!("{e}"))?))
}

fn parse_preset(name: &str) -> Result<Preset> {
    let key: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    Ok(match key.as_str() {
        "simplemlp" | "mlp" => Preset::SimpleMlp,
        "simplecnn" | "cnn" => Preset::SimpleCnn,
        "lenet5" | "lenet" => Preset::LeNet5,
        "vgg11" => Preset::Vgg11,
        "vgg16" => Preset::Vgg16,
        "vgg19" => Preset::Vgg19,
        _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
    })
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            full,
            out,
            no_checkpoints,
            quiet,
        } => train(&config, full, &out, !no_checkpoints, !quiet),
        Command::Gradcheck {
            preset,
            tol,
            step,
            seed,
            seeds,
            coords,
            batch,
            ns,
            ns_mode,
            inject,
        } => {
            let opts = CheckOptions {
                tol,
                step,
                max_coords: coords,
                seed,
                inject,
            };
            if preset.eq_ignore_ascii_case("suite") {
                gradcheck_suite(seed..seed + seeds, batch, &opts)
            } else {
                gradcheck_preset(&preset, ns.map(|n| (n, ns_mode)), batch, opts)
            }
        }
        Command::MinimaVerify { t, n, beta } => {
            let beta = if beta.len() == 1 { vec![beta[0]; n] } else { beta };
            let cmp = compare_minima_spaces(t, n, &beta)?;
            println!("{cmp}");
            println!("{}", serde_json::to_string_pretty(&cmp)?);
            Ok(0)
        }
        Command::FmExport {
            checkpoint,
            image_index,
            beta,
            dataset,
            out,
        } => fm_export(&checkpoint, image_index, beta.as_deref(), dataset, out),
        Command::Eval { checkpoint, dataset } => {
            let (mut model, side) = load_checkpoint(&checkpoint)?;
            let mut config = side.config;
            if let Some(dir) = dataset {
                config.data.dir = Some(dir);
            }
            let (train_full, test) = load_dataset(&config.data)?;
            let (_, test, _) = prepare_data(&config, &train_full, &test)?;
            let acc = evaluate(&mut model, &test)?;
            println!("{}: test accuracy {acc:.2}% on {} images", checkpoint.display(), test.len());
            Ok(0)
        }
    }
}

fn train(path: &Path, full: bool, out: &Path, checkpoints: bool, verbose: bool) -> Result<i32> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = NetworkConfig::from_json(&text)?;
    if full {
        config.profile = Profile::Full;
    }
    config.validate()?;
    let (train_full, test) = load_dataset(&config.data)?;
    let dir = out.join(&config.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let result = run_experiment_with(&config, &train_full, &test, verbose, |trial, model| {
        if checkpoints {
            save_checkpoint(model, &config, trial.seed, &dir.join(format!("trial{}.ckpt", trial.trial)))?;
        }
        Ok(())
    })?;
    let (curves, summary) = write_outputs(&result, &dir)?;
    println!(
        "{}: {} over {} trial(s), best-epoch mean {:.2}, {} parameters, {:.1} s",
        config.name,
        result.table_cell(),
        result.trials.len(),
        result.best_mean,
        result.param_count,
        result.wall_secs
    );
    println!("wrote {} and {}", curves.display(), summary.display());
    match &result.failure {
        Some(f) => {
            eprintln!("error: run aborted: {f}");
            Ok(1)
        }
        None => Ok(0),
    }
}

fn gradcheck_suite(seeds: std::ops::Range<u64>, batch: usize, opts: &CheckOptions) -> Result<i32> {
    let cases = audit_cases();
    let runs = run_audit_suite(&cases, seeds.clone(), batch.max(1), opts)?;
    println!("{:<20} {:>6} {:>8} {:>9} {:>12}  status", "case", "seeds", "failed", "excluded", "worst rel");
    let mut ok = true;
    for case in &cases {
        let mine: Vec<_> = runs.iter().filter(|r| r.case == case.name).collect();
        let failed: Vec<u64> = mine.iter().filter(|r| !r.report.passed()).map(|r| r.seed).collect();
        let worst = mine.iter().map(|r| r.report.max_rel()).fold(0.0, f64::max);
        let excluded: usize = mine.iter().map(|r| r.report.excluded()).sum();
        ok &= failed.is_empty();
        println!(
            "{:<20} {:>6} {:>8} {:>9} {:>12.3e}  {}",
            case.name,
            mine.len(),
            failed.len(),
            excluded,
            worst,
            if failed.is_empty() { "ok".to_string() } else { format!("FAIL seeds {failed:?}") }
        );
    }
    if let Some(r) = runs.iter().find(|r| !r.report.passed()) {
        println!("\nfirst failure: {} seed {}\n{}", r.case, r.seed, r.report);
    }
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { 0 } else { 1 })
}

fn gradcheck_preset(name: &str, ns: Option<(usize, NsMode)>, batch: usize, mut opts: CheckOptions) -> Result<i32> {
    let mut config = NetworkConfig::preset(parse_preset(name)?);
    if let Some((n, mode)) = ns {
        config = config.with_ns(n, mode, None);
    }
    let mut model = build_network(&config, &mut rng::stream(opts.seed, Stream::Init))?;
    for layer in model.layers_mut() {
        if let Layer::Dropout(d) = layer {
            d.set_frozen(true);
        }
    }
    let mut data = rng::stream(opts.seed, Stream::Data);
    let shape: Vec<usize> = std::iter::once(batch.max(1)).chain(model.input_shape().iter().copied()).collect();
    let x = Tensor::uniform(&shape, 0.0, 1.0, &mut data);
    let labels: Vec<usize> = (0..batch.max(1)).map(|i| (i * 7 + opts.seed as usize) % model.classes()).collect();
    opts.max_coords = opts.max_coords.or(Some(25));
    let report = check_model_with(&model, &x, &labels, &opts)?;
    println!("{name}: {} parameters, batch {}", model.param_count(), labels.len());
    println!("{report}");
    Ok(if report.passed() { 0 } else { 1 })
}

fn fm_export(ckpt: &Path, index: usize, beta: Option<&[f64]>, dataset: Option<PathBuf>, out: Option<PathBuf>) -> Result<i32> {
    let (mut model, side) = load_checkpoint(ckpt)?;
    let mut config = side.config;
    if let Some(dir) = dataset {
        config.data.dir = Some(dir);
    }
    let (train_full, test) = load_dataset(&config.data)?;
    let (_, test, _) = prepare_data(&config, &train_full, &test)?;
    if index >= test.len() {
        return Err(Error::Index {
            what: "test image",
            index,
            len: test.len(),
        });
    }
    let out = out.unwrap_or_else(|| ckpt.with_extension("").with_file_name(format!("fm_{index}")));
    let written = export_feature_maps(&mut model, test.image(index), &out, beta)?;
    println!(
        "image {index} (label {}): wrote {} PGM files to {}",
        test.labels[index],
        written.len(),
        out.display()
    );
    Ok(0)
}
