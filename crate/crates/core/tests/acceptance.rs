//! One PASS/FAIL line per acceptance criterion, printed straight to stdout so
//! the harness does not swallow it. Criteria 6 to 8 need MNIST in
//! `$NSFOLD_DATA_DIR/mnist` (or `data/mnist` at the workspace root) and print
//! SKIP without it. Criterion 8 is advisory and never fails the test.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use tempfile::tempdir;

use nsfold::checkpoint::{load_checkpoint, save_checkpoint};
use nsfold::config::{build_network, EvalPolicy, NetworkConfig, Preset};
use nsfold::data::{load_cifar10, load_dataset, load_mnist, write_cifar10, write_mnist, Dataset};
use nsfold::features::{noise_metric, noise_metric_with_signal, pgm_bytes};
use nsfold::gradcheck::{audit_cases, run_audit_suite, verify_closed_forms, CheckOptions};
use nsfold::layers::Phase;
use nsfold::minima::{compare_minima_spaces, loss_at_stationary_point, Which};
use nsfold::nsfold::{ns_forward, ns_param_count, NsLayer, NsMode};
use nsfold::rng::{self, seeded, Stream};
use nsfold::tensor::Tensor;
use nsfold::train::{run_experiment, write_outputs, RunResult};

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    /// Failed, but the criterion is advisory.
    Warn,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn emit(n: usize, o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Warn => "FAIL (advisory, warning only)",
        Status::Skip => "SKIP",
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2}: {tag}  {}", o.detail);
    let _ = out.flush();
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = match std::env::var_os("NSFOLD_DATA_DIR") {
        Some(root) => PathBuf::from(root).join("mnist"),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    };
    dir.join("train-images-idx3-ubyte").is_file().then_some(dir)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = audit_cases();
    let opts = CheckOptions::default();
    let runs = run_audit_suite(&cases, 0..20, 2, &opts).unwrap();
    let failed: Vec<String> = runs
        .iter()
        .filter(|r| !r.report.passed())
        .map(|r| format!("{}#{}", r.case, r.seed))
        .collect();
    let worst = runs.iter().map(|r| r.report.max_rel()).fold(0.0, f64::max);
    let sentinel = CheckOptions {
        inject: Some((0, 1.01)),
        ..opts
    };
    let bugged = run_audit_suite(&cases, 0..20, 2, &sentinel).unwrap();
    let caught = bugged.iter().filter(|r| !r.report.passed()).count();
    let secs = start.elapsed().as_secs_f64();
    let ok = failed.is_empty() && caught == bugged.len() && secs < 120.0;
    outcome(
        ok,
        format!(
            "{} cases x 20 seeds: {}/{} pass (worst rel {worst:.1e}{}), sentinel caught {caught}/{}, {secs:.1} s",
            cases.len(),
            runs.len() - failed.len(),
            runs.len(),
            if failed.is_empty() { String::new() } else { format!(", failing {failed:?}") },
            bugged.len()
        ),
    )
}

fn closed_forms() -> Outcome {
    let report = verify_closed_forms(5, &[(2, 2), (4, 2), (4, 4), (8, 4)]).unwrap();
    let max = |f: fn(&nsfold::gradcheck::ClosedFormCase) -> f64| report.cases.iter().map(f).fold(0.0, f64::max);
    outcome(
        report.passed(),
        format!(
            "{} cases: weight {:.1e}, kernel~bp {:.1e}, kernel~fd {:.1e}, affected kernels 1 -> N in {}/{}{}",
            report.cases.len(),
            max(|c| c.weight_vs_backprop),
            max(|c| c.kernel_vs_backprop.max(c.plain_kernel_vs_backprop)),
            max(|c| c.kernel_vs_fd.max(c.plain_kernel_vs_fd)),
            report.cases.iter().filter(|c| c.changed_plain == 1 && c.changed_ns == c.n).count(),
            report.cases.len(),
            if report.passed() { String::new() } else { format!(", failing {:?}", report.failing_seeds()) }
        ),
    )
}

fn minima() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut problems = Vec::new();
    let (mut residual, mut loss_err) = (0.0f64, 0.0f64);
    let mut count = 0;
    for (t, n) in [(2, 2), (4, 2), (4, 4), (8, 2), (8, 4)] {
        for _ in 0..10 {
            let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let c = compare_minima_spaces(t, n, &beta).unwrap();
            count += 1;
            residual = residual.max(c.containment_residual).max(c.nullspace_residual);
            let ln10 = 10f64.ln();
            let mut losses = vec![c.loss_baseline, c.loss_ns];
            for seed in 0..3 {
                losses.push(loss_at_stationary_point(t, n, &beta, Which::Ns, 0.3, seed).unwrap());
                losses.push(loss_at_stationary_point(t, n, &beta, Which::Baseline, -0.7, seed).unwrap());
            }
            loss_err = losses.iter().map(|l| (l - ln10).abs()).fold(loss_err, f64::max);
            let good = c.rank_b == 2 * t
                && c.rank_bprime == 2 * t / n
                && c.gap == 2 * t - 2 * t / n
                && c.containment
                && c.containment_residual < 1e-9
                && c.nullspace_residual < 1e-9
                && losses.iter().all(|l| (l - ln10).abs() <= 1e-12);
            if !good {
                problems.push(format!("(t={t},N={n},beta={beta:?})"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        problems.is_empty() && secs < 10.0,
        format!(
            "{count} systems: ranks 2t / 2t/N and gap 2t(1-1/N) {}, residual {residual:.1e}, |loss - ln 10| {loss_err:.1e}, {secs:.2} s",
            if problems.is_empty() { "hold".to_string() } else { format!("fail for {problems:?}") }
        ),
    )
}

fn ns_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut rng = seeded(7);
    let (mut lin, mut hom) = (0.0f64, 0.0f64);
    for (t, n) in [(2, 2), (4, 2), (4, 4), (6, 3), (8, 2), (8, 4), (16, 8)] {
        let x1 = Tensor::randn(&[t, 5, 3], 1.0, &mut rng);
        let x2 = Tensor::randn(&[t, 5, 3], 1.0, &mut rng);
        let beta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut layer = NsLayer::new(t, n, beta.clone(), NsMode::Fixed).unwrap();
        let y1 = ns_forward(&x1, &mut layer).unwrap();
        if y1.len() != x1.len() {
            notes.push(format!("shape (t={t},N={n})"));
        }
        let seg = y1.len() / n;
        if (1..n).any(|k| y1.data()[..seg].iter().zip(&y1.data()[k * seg..(k + 1) * seg]).any(|(a, b)| a.to_bits() != b.to_bits())) {
            notes.push(format!("replication (t={t},N={n})"));
        }
        let y2 = ns_forward(&x2, &mut layer).unwrap();
        let (a, c) = (1.7, -0.4);
        let ym = ns_forward(&x1.scale(a).add(&x2.scale(c)).unwrap(), &mut layer).unwrap();
        let expect = y1.scale(a).add(&y2.scale(c)).unwrap();
        lin = lin.max(ym.max_abs_diff(&expect) / expect.max_abs().max(1.0));
        let mut scaled = NsLayer::new(t, n, beta.iter().map(|b| b * a).collect(), NsMode::Fixed).unwrap();
        let ya = ns_forward(&x1, &mut scaled).unwrap();
        hom = hom.max(ya.max_abs_diff(&y1.scale(a)) / y1.max_abs().max(1.0));
        let fixed = NsLayer::uniform(t, n, 0.5, NsMode::Fixed).unwrap();
        let trainable = NsLayer::uniform(t, n, 0.5, NsMode::Trainable).unwrap();
        if ns_param_count(&fixed) != 0 || ns_param_count(&trainable) != n {
            notes.push(format!("param delta (t={t},N={n})"));
        }
    }
    // whole-network parameter deltas
    let count = |c: &NetworkConfig| build_network(c, &mut seeded(0)).unwrap().param_count();
    for preset in [Preset::SimpleCnn, Preset::LeNet5] {
        let base = count(&NetworkConfig::preset(preset.clone()));
        for n in [2, 4] {
            let fns = count(&NetworkConfig::preset(preset.clone()).with_ns(n, NsMode::Fixed, None));
            let tns = count(&NetworkConfig::preset(preset.clone()).with_ns(n, NsMode::Trainable, None));
            if fns != base || tns != base + n {
                notes.push(format!("{preset:?} N={n}: {base} / {fns} / {tns}"));
            }
        }
    }
    if lin > 1e-12 || hom > 1e-12 {
        notes.push(format!("linearity {lin:.1e}, homogeneity {hom:.1e}"));
    }
    outcome(
        notes.is_empty(),
        format!(
            "replication bit-equal, linearity {lin:.1e}, beta-homogeneity {hom:.1e}, FNS delta 0 / TNS delta N{}",
            if notes.is_empty() { String::new() } else { format!("; violations {notes:?}") }
        ),
    )
}

fn noise() -> Outcome {
    let (h, w, n) = (100, 100, 4);
    let mut ratios = Vec::new();
    let mut oracle = Vec::new();
    for seed in 0..10 {
        let mut rng = rng::stream(seed, Stream::Sampling);
        let signal: Vec<f64> = (0..h * w)
            .map(|p| ((p / w) as f64 * 0.11).sin() + ((p % w) as f64 * 0.07).cos())
            .collect();
        let noise = Tensor::randn(&[n, h * w], 0.5, &mut rng);
        let copies: Vec<Vec<f64>> = (0..n).map(|r| signal.iter().zip(noise.sample(r)).map(|(s, e)| s + e).collect()).collect();
        let beta = vec![0.25; n];
        ratios.push(noise_metric(&copies, &beta).unwrap().variance_ratio);
        oracle.push(noise_metric_with_signal(&copies, &signal, &beta).unwrap().variance_ratio);
    }
    // with equal coefficients the signal-free estimate equals sum b^2 by
    // construction, so the known-signal ratio carries the real check
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let inside = |v: &[f64]| v.iter().all(|r| (0.20..=0.30).contains(r));
    let ((lo, hi), (olo, ohi)) = (range(&ratios), range(&oracle));
    outcome(
        inside(&ratios) && inside(&oracle),
        format!(
            "N=4, beta 0.25, {} pixels, 10 seeds: estimated ratio in [{lo:.4}, {hi:.4}], known-signal ratio in [{olo:.4}, {ohi:.4}]",
            h * w
        ),
    )
}

fn desk_config(name: &str, preset: Preset, dir: &PathBuf) -> NetworkConfig {
    let mut cfg = NetworkConfig::preset(preset);
    cfg.name = name.into();
    cfg.repeats = 5;
    cfg.data.dir = Some(dir.clone());
    cfg
}

fn epoch_acc(r: &RunResult, trial: usize, epoch: usize) -> f64 {
    r.trials[trial].curve[epoch - 1].test_acc.expect("evaluated epoch")
}

/// Criteria 6 and 8 share the SimpleCNN runs.
fn simple_cnn(dir: &PathBuf, train: &Dataset, test: &Dataset) -> (Outcome, Outcome) {
    let mut base_cfg = desk_config("simple_cnn_desk", Preset::SimpleCnn, dir);
    // criterion 8 reads epoch 2; other epochs are not needed
    base_cfg.eval_policy = EvalPolicy::Epochs(vec![2]);
    let fns_cfg = NetworkConfig {
        name: "simple_cnn_fns2_desk".into(),
        ..base_cfg.clone().with_ns(2, NsMode::Fixed, Some(0.25))
    };
    let start = Instant::now();
    let base = run_experiment(&base_cfg, train, test, false).unwrap();
    let fns = run_experiment(&fns_cfg, train, test, false).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let gap = fns.mean - base.mean;
    let ok = base.failure.is_none()
        && fns.failure.is_none()
        && base.mean >= 97.0
        && (-0.3..=1.0).contains(&gap)
        && minutes <= 60.0;
    let c6 = outcome(
        ok,
        format!(
            "baseline {} , 2-fold FNS {} (gap {gap:+.2} pp, allowed [-0.30, +1.00]), {minutes:.1} min for 10 trials",
            base.table_cell(),
            fns.table_cell()
        ),
    );
    let wins = (0..5).filter(|&i| epoch_acc(&fns, i, 2) >= epoch_acc(&base, i, 2)).count();
    let mut pairs = String::new();
    for i in 0..5 {
        let _ = write!(pairs, " {:.2}/{:.2}", epoch_acc(&base, i, 2), epoch_acc(&fns, i, 2));
    }
    let c8 = Outcome {
        status: if wins >= 3 { Status::Pass } else { Status::Warn },
        detail: format!("epoch-2 NS >= baseline in {wins}/5 paired seeds (baseline/NS:{pairs})"),
    };
    (c6, c8)
}

fn simple_mlp(dir: &PathBuf, train: &Dataset, test: &Dataset) -> Outcome {
    let mut base_cfg = desk_config("simple_mlp_desk", Preset::SimpleMlp, dir);
    base_cfg.eval_policy = EvalPolicy::FinalOnly;
    let tns_cfg = NetworkConfig {
        name: "simple_mlp_tns2_desk".into(),
        ..base_cfg.clone().with_ns(2, NsMode::Trainable, None)
    };
    let base = run_experiment(&base_cfg, train, test, false).unwrap();
    let tns = run_experiment(&tns_cfg, train, test, false).unwrap();
    outcome(
        tns.mean >= base.mean,
        format!(
            "baseline {}, 2-fold TNS {}, gap {:+.2} pp",
            base.table_cell(),
            tns.table_cell(),
            tns.mean - base.mean
        ),
    )
}

fn byte_dataset(n: usize, shape: (usize, usize, usize), seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let per = shape.0 * shape.1 * shape.2;
    let images = (0..n * per).map(|_| rng.random_range(0..=255u8) as f64 / 255.0).collect();
    let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
    Dataset::new("fixture", images, labels, shape).unwrap()
}

fn round_trips() -> Outcome {
    let dir = tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let mut notes = Vec::new();

    let mnist = byte_dataset(25, (1, 28, 28), 1);
    write_mnist(&mnist, &p("img"), &p("lbl")).unwrap();
    let back = load_mnist(&p("img"), &p("lbl")).unwrap();
    let written = std::fs::read(p("img")).unwrap();
    write_mnist(&back, &p("img2"), &p("lbl2")).unwrap();
    if back.images != mnist.images || back.labels != mnist.labels || std::fs::read(p("img2")).unwrap() != written {
        notes.push("mnist");
    }

    let cifar = byte_dataset(12, (3, 32, 32), 2);
    write_cifar10(&cifar, &p("c.bin")).unwrap();
    let back = load_cifar10(&[p("c.bin")]).unwrap();
    write_cifar10(&back, &p("c2.bin")).unwrap();
    if back.images != cifar.images
        || back.labels != cifar.labels
        || std::fs::read(p("c.bin")).unwrap() != std::fs::read(p("c2.bin")).unwrap()
    {
        notes.push("cifar");
    }

    let cfg = NetworkConfig::preset(Preset::LeNet5).with_ns(4, NsMode::Trainable, None);
    let mut model = build_network(&cfg, &mut rng::stream(3, Stream::Init)).unwrap();
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v *= 1.001;
        }
    }
    save_checkpoint(&model, &cfg, 3, &p("m.ckpt")).unwrap();
    let (mut restored, _) = load_checkpoint(&p("m.ckpt")).unwrap();
    let mut data = seeded(4);
    for _ in 0..10 {
        let x = Tensor::uniform(&[1, 1, 28, 28], 0.0, 1.0, &mut data);
        let a = model.forward(&x, Phase::Eval, &mut seeded(0)).unwrap();
        let b = restored.forward(&x, Phase::Eval, &mut seeded(0)).unwrap();
        if a.data().iter().zip(b.data()).any(|(u, v)| u.to_bits() != v.to_bits()) {
            notes.push("checkpoint");
            break;
        }
    }

    let pgm = pgm_bytes(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    if pgm != b"P5\n3 2\n255\n\x00\x33\x66\x99\xcc\xff" {
        notes.push("pgm");
    }
    outcome(
        notes.is_empty(),
        if notes.is_empty() {
            "MNIST and CIFAR-10 bit-identical, checkpoint logits bit-identical on 10 inputs, PGM bytes exact".into()
        } else {
            format!("mismatch in {notes:?}")
        },
    )
}

fn determinism(mnist: Option<&(PathBuf, Dataset, Dataset)>) -> Outcome {
    let (cfg, train, test, source) = match mnist {
        Some((dir, train, test)) => {
            let mut cfg = desk_config("determinism", Preset::SimpleMlp, dir);
            cfg.train_subset = Some(2000);
            cfg.epochs = Some(2);
            cfg.repeats = 2;
            (cfg, train.take(2000), test.take(1000), "MNIST")
        }
        None => {
            let cfg = NetworkConfig {
                name: "determinism".into(),
                preset: Preset::SimpleMlp,
                epochs: Some(2),
                repeats: 2,
                ..NetworkConfig::default()
            };
            (cfg, byte_dataset(500, (1, 28, 28), 5), byte_dataset(200, (1, 28, 28), 6), "synthetic")
        }
    };
    let cfg = cfg.with_ns(2, NsMode::Trainable, None);
    let files: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let out = tempdir().unwrap();
            let r = run_experiment(&cfg, &train, &test, false).unwrap();
            let (curves, _) = write_outputs(&r, out.path()).unwrap();
            std::fs::read(curves).unwrap()
        })
        .collect();
    outcome(
        files[0] == files[1],
        format!("two {source} runs (2 trials, NS-TNS SimpleMLP): curves.csv {} bytes, identical = {}", files[0].len(), files[0] == files[1]),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut run = |n: usize, o: Outcome| {
        emit(n, &o);
        results.push((n, o.status));
    };
    run(1, gradient_suite());
    run(2, closed_forms());
    run(3, minima());
    run(4, ns_invariants());
    run(5, noise());

    let mnist = mnist_dir().map(|dir| {
        let mut data = NetworkConfig::default().data;
        data.dir = Some(dir.clone());
        let (train, test) = load_dataset(&data).unwrap();
        (dir, train, test)
    });
    match &mnist {
        Some((dir, train, test)) => {
            let (c6, c8) = simple_cnn(dir, train, test);
            run(6, c6);
            run(7, simple_mlp(dir, train, test));
            run(8, c8);
        }
        None => {
            for n in 6..=8 {
                run(
                    n,
                    Outcome {
                        status: Status::Skip,
                        detail: "MNIST not found (set NSFOLD_DATA_DIR)".into(),
                    },
                );
            }
        }
    }
    run(9, round_trips());
    run(10, determinism(mnist.as_ref()));

    let failed: Vec<usize> = results.iter().filter(|(_, s)| *s == Status::Fail).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
