//! Training loop, evaluation and repeated-trial experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::{build_network, EvalPolicy, NetworkConfig, Regularizer};
use crate::data::{load_dataset, normalize, split_validation, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::layers::{l2_penalty, Phase};
use crate::loss::SoftmaxCE;
use crate::model::Model;
use crate::optim::OptimizerState;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent; absent when the eval policy skips this epoch.
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub curve: Vec<EpochRecord>,
    /// Test accuracy (percent) after the last epoch.
    pub final_acc: f64,
    /// Best per-epoch test accuracy (percent).
    pub best_acc: f64,
    /// Accuracy on the held-out validation images, when any were held out.
    pub val_acc: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub config: NetworkConfig,
    pub param_count: usize,
    pub trials: Vec<TrialResult>,
    /// Mean of the final-epoch accuracies.
    pub mean: f64,
    /// Sample standard deviation (n - 1 divisor); absent for one trial.
    pub std: Option<f64>,
    pub best_mean: f64,
    pub wall_secs: f64,
    /// Set when a trial aborted; `trials` then holds the completed ones.
    pub failure: Option<String>,
}

impl RunResult {
    pub fn finals(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.final_acc).collect()
    }

    /// Mean test accuracy after epoch `epoch` (1-based) over trials.
    pub fn epoch_mean(&self, epoch: usize) -> Option<f64> {
        let accs: Vec<f64> = self
            .trials
            .iter()
            .filter_map(|t| t.curve.get(epoch.checked_sub(1)?)?.test_acc)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// `mean±std` with two decimals, as in a results table.
    pub fn table_cell(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

pub fn format_mean_std(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.2}±{s:.2}"),
        None => format!("{mean:.2}"),
    }
}

/// Mean and sample standard deviation (`None` for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn batch_tensor(ds: &Dataset, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let mut data = Vec::with_capacity(indices.len() * ds.image_len());
    for &i in indices {
        data.extend_from_slice(ds.image(i));
    }
    let x = Tensor::new(vec![indices.len(), ds.channels, ds.height, ds.width], data)?;
    Ok((x, indices.iter().map(|&i| ds.labels[i]).collect()))
}

/// Classification accuracy in percent (0 for an empty set).
pub fn evaluate(model: &mut Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(&ds.images, EVAL_BATCH)?;
    let correct = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// Trains `model` for `config.epochs()` epochs with trial seed `seed` and
/// records the test accuracy per epoch.
pub fn train(
    model: &mut Model,
    config: &NetworkConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
    verbose: bool,
) -> Result<(Vec<EpochRecord>, f64)> {
    let epochs = config.epochs();
    let mut opt = OptimizerState::new(config.optimizer())?;
    let mut shuffle = rng::stream(seed, Stream::Shuffle);
    let mut drop = rng::stream(seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut ce = SoftmaxCE::new(model.classes());
    let mut curve = Vec::with_capacity(epochs);
    let mut last_acc = None;
    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = batch_tensor(train_set, idx)?;
            let logits = model.forward(&x, Phase::Train, &mut drop)?;
            let mut loss = ce.forward(&logits, &labels)?;
            model.backward(&ce.backward()?)?;
            let mut params = model.params_mut();
            if let Regularizer::L2 { lambda } = config.regularizer {
                loss += l2_penalty(&mut params, lambda)?;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    learning_rate: config.optimizer().learning_rate(),
                    loss,
                });
            }
            opt.step(&mut params)?;
            total += loss;
            batches += 1;
        }
        let due = match &config.eval_policy {
            EvalPolicy::EveryEpoch => true,
            EvalPolicy::FinalOnly => epoch == epochs,
            EvalPolicy::Epochs(at) => epoch == epochs || at.contains(&epoch),
        };
        let test_acc = if due { Some(evaluate(model, test_set)?) } else { None };
        if test_acc.is_some() {
            last_acc = test_acc;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / batches.max(1) as f64,
            test_acc,
        };
        if verbose {
            eprintln!(
                "  epoch {:>3}  loss {:.5}  test {}",
                rec.epoch,
                rec.train_loss,
                rec.test_acc.map_or("-".into(), |a| format!("{a:.2}%"))
            );
        }
        curve.push(rec);
    }
    let final_acc = match last_acc {
        Some(a) => a,
        None => evaluate(model, test_set)?,
    };
    Ok((curve, final_acc))
}

/// Training and test sets after subsetting, validation hold-out and
/// normalization; the validation set may be empty.
pub fn prepare_data(config: &NetworkConfig, train_full: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    let mut train_set = match config.train_subset() {
        Some(n) => train_full.take(n),
        None => train_full.clone(),
    };
    let mut val = train_set.subset(&[]);
    if config.data.validation > 0 {
        (train_set, val) = split_validation(
            &train_set,
            SplitSpec {
                validation: config.data.validation,
                seed: config.seed,
            },
        )?;
    }
    let mut test = test.clone();
    normalize(&mut train_set, &mut [&mut test, &mut val], config.data.normalization());
    Ok((train_set, test, val))
}

/// Activations of the larger presets are tens of megabytes. glibc hands
/// such blocks to mmap by default, so every batch would pay for fresh page
/// faults; keep them on the heap instead.
fn keep_large_buffers() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator tuning parameters.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            }
        });
    }
}

/// Runs `config.repeats` trials with seeds `seed, seed + 1, ...` on already
/// loaded data. A trial that aborts ends the run; the result keeps the
/// completed trials and the error text.
pub fn run_experiment(config: &NetworkConfig, train_full: &Dataset, test_full: &Dataset, verbose: bool) -> Result<RunResult> {
    run_experiment_with(config, train_full, test_full, verbose, |_, _| Ok(()))
}

/// [`run_experiment`] that hands every finished trial and its trained model
/// to `on_trial` (e.g. to save a checkpoint).
pub fn run_experiment_with(
    config: &NetworkConfig,
    train_full: &Dataset,
    test_full: &Dataset,
    verbose: bool,
    mut on_trial: impl FnMut(&TrialResult, &Model) -> Result<()>,
) -> Result<RunResult> {
    config.validate()?;
    keep_large_buffers();
    let start = Instant::now();
    let (train_set, test_set, val_set) = prepare_data(config, train_full, test_full)?;
    let mut trials = Vec::new();
    let mut failure = None;
    let mut param_count = 0;
    for trial in 0..config.repeats {
        let seed = config.seed + trial as u64;
        let t0 = Instant::now();
        let mut model = build_network(config, &mut rng::stream(seed, Stream::Init))?;
        param_count = model.param_count();
        if verbose {
            eprintln!("{} trial {trial} (seed {seed}, {param_count} parameters)", config.name);
        }
        match train(&mut model, config, &train_set, &test_set, seed, verbose) {
            Ok((curve, final_acc)) => {
                let best_acc = curve.iter().filter_map(|r| r.test_acc).fold(final_acc, f64::max);
                let val_acc = if val_set.is_empty() {
                    None
                } else {
                    Some(evaluate(&mut model, &val_set)?)
                };
                let result = TrialResult {
                    trial,
                    seed,
                    curve,
                    final_acc,
                    best_acc,
                    val_acc,
                    wall_secs: t0.elapsed().as_secs_f64(),
                };
                on_trial(&result, &model)?;
                trials.push(result);
            }
            Err(e) => {
                failure = Some(format!("trial {trial} (seed {seed}): {e}"));
                break;
            }
        }
    }
    let (mean, std) = if trials.is_empty() {
        (f64::NAN, None)
    } else {
        mean_std(&trials.iter().map(|t| t.final_acc).collect::<Vec<_>>())
    };
    let best_mean = trials.iter().map(|t| t.best_acc).sum::<f64>() / trials.len().max(1) as f64;
    Ok(RunResult {
        config: config.clone(),
        param_count,
        trials,
        mean,
        std,
        best_mean,
        wall_secs: start.elapsed().as_secs_f64(),
        failure,
    })
}

/// Loads the configured dataset and runs the experiment.
pub fn run_config(config: &NetworkConfig, verbose: bool) -> Result<RunResult> {
    let (train_full, test) = load_dataset(&config.data)?;
    run_experiment(config, &train_full, &test, verbose)
}

/// `trial,epoch,train_loss,test_acc` rows, one per trial and epoch.
pub fn curves_csv(result: &RunResult) -> String {
    let mut s = String::from("trial,epoch,train_loss,test_acc\n");
    for t in &result.trials {
        for r in &t.curve {
            let acc = r.test_acc.map_or(String::new(), |a| format!("{a}"));
            writeln!(s, "{},{},{},{}", t.trial, r.epoch, r.train_loss, acc).expect("writing to a String");
        }
    }
    s
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    mean: f64,
    std: Option<f64>,
    table: String,
    best_mean: f64,
    finals: Vec<f64>,
    bests: Vec<f64>,
    val_accs: Vec<Option<f64>>,
    param_count: usize,
    wall_secs: f64,
    failure: &'a Option<String>,
    config: &'a NetworkConfig,
}

pub fn summary_json(result: &RunResult) -> Result<String> {
    let summary = Summary {
        name: &result.config.name,
        mean: result.mean,
        std: result.std,
        table: result.table_cell(),
        best_mean: result.best_mean,
        finals: result.finals(),
        bests: result.trials.iter().map(|t| t.best_acc).collect(),
        val_accs: result.trials.iter().map(|t| t.val_acc).collect(),
        param_count: result.param_count,
        wall_secs: result.wall_secs,
        failure: &result.failure,
        config: &result.config,
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Writes `curves.csv` and `summary.json` into `dir` (created if missing)
/// and returns the two paths.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curves = dir.join("curves.csv");
    fs::write(&curves, curves_csv(result)).map_err(|e| Error::io(&curves, e))?;
    let summary = dir.join("summary.json");
    fs::write(&summary, summary_json(result)?).map_err(|e| Error::io(&summary, e))?;
    Ok((curves, summary))
}
