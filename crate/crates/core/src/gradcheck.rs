//! Finite-difference gradient audit.
//!
//! [`check_model`] compares every parameter gradient produced by
//! backpropagation with central differences of the batch loss. Coordinates
//! where a perturbation moves any ReLU across zero or changes a max-pool
//! winner are excluded: the loss is not differentiable across that kink and
//! central differences straddling it are meaningless. Exclusions are counted
//! in the report.
//!
//! The relative error uses a denominator floor of at least the smallest
//! gradient a central difference can resolve: the loss itself carries
//! roundoff of about `eps * |L|`, so the difference quotient has noise
//! `eps * |L| / h`, and only gradients above `eps * |L| / (h * tol)` can
//! meet `tol`. Coordinates below that level are compared against the floor
//! and counted as `floored`.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::closed_form::{backprop_toy, closed_form_kernel_grad, closed_form_weight_grad, shared_slice_kernel_grad, ToyNetwork};
use crate::config::{build_layers, LayerSpec, NsConfig};
use crate::error::{Error, Result};
use crate::layers::{Layer, ParamKind, Phase};
use crate::loss::SoftmaxCE;
use crate::model::Model;
use crate::nsfold::NsMode;
use crate::rng::{self, Stream};
use crate::tensor::{ConvMode, Tensor};

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-8;

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every
/// coordinate of `params`.
pub fn finite_diff(mut loss: impl FnMut(&[f64]) -> Result<f64>, params: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let plus = loss(&p)?;
        p[i] = orig - step;
        let minus = loss(&p)?;
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!("non-finite loss while perturbing coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub tol: f64,
    pub step: f64,
    /// Check at most this many coordinates of each parameter tensor, chosen
    /// at random; `None` checks all.
    pub max_coords: Option<usize>,
    /// Seeds the coordinate sample.
    pub seed: u64,
    /// Multiplies the analytic gradient of parameter tensor `.0` by `.1`
    /// before comparing (bug injection for testing the audit itself).
    pub inject: Option<(usize, f64)>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            tol: 1e-5,
            step: 1e-5,
            max_coords: None,
            seed: 0,
            inject: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorReport {
    pub layer: usize,
    pub layer_kind: &'static str,
    pub name: &'static str,
    pub kind: ParamKind,
    pub checked: usize,
    pub excluded: usize,
    /// Checked coordinates whose gradient lay below the resolution floor.
    pub floored: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tol: f64,
    pub step: f64,
    /// Denominator floor used for the relative error.
    pub floor: f64,
    pub tensors: Vec<TensorReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn excluded(&self) -> usize {
        self.tensors.iter().map(|t| t.excluded).sum()
    }

    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    /// The tensor holding the worst coordinate overall.
    pub fn worst(&self) -> Option<&TensorReport> {
        self.tensors.iter().max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<5} {:<8} {:<8} {:>8} {:>8} {:>12} {:>12} {:>8}  status",
            "layer", "kind", "param", "checked", "excluded", "max_rel", "mean_rel", "worst"
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "{:<5} {:<8} {:<8} {:>8} {:>8} {:>12.3e} {:>12.3e} {:>8}  {}",
                t.layer,
                t.layer_kind,
                t.name,
                t.checked,
                t.excluded,
                t.max_rel,
                t.mean_rel,
                t.worst_index.map_or("-".to_string(), |i| i.to_string()),
                if t.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "tol {:.1e}, step {:.1e}, floor {:.1e}, excluded {}, floored {}, max rel {:.3e}: {}",
            self.tol,
            self.step,
            self.floor,
            self.excluded(),
            self.tensors.iter().map(|t| t.floored).sum::<usize>(),
            self.max_rel(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Picks the forward phase: evaluation unless dropout masks are frozen, in
/// which case training mode replays the frozen masks.
fn audit_phase(model: &Model) -> Result<Phase> {
    let dropouts: Vec<bool> = model
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Dropout(d) => Some(d.is_frozen()),
            _ => None,
        })
        .collect();
    if dropouts.iter().all(|&f| f) && !dropouts.is_empty() {
        Ok(Phase::Train)
    } else if dropouts.iter().any(|&f| f) {
        Err(Error::Audit(
            "dropout layers must be either all frozen or all unfrozen (evaluated in eval mode)".into(),
        ))
    } else {
        Ok(Phase::Eval)
    }
}

fn batch_loss(model: &mut Model, x: &Tensor, labels: &[usize], phase: Phase) -> Result<(f64, Vec<Vec<usize>>)> {
    let mut rng = rng::stream(0, Stream::Dropout);
    let logits = model.forward(x, phase, &mut rng)?;
    let mut ce = SoftmaxCE::new(model.classes());
    let loss = ce.forward(&logits, labels)?;
    Ok((loss, model.kink_signature()))
}

/// [`check_model_with`] at the given tolerance, step 1e-5, all coordinates.
pub fn check_model(model: &Model, x: &Tensor, labels: &[usize], tol: f64) -> Result<GradReport> {
    check_model_with(
        model,
        x,
        labels,
        &CheckOptions {
            tol,
            ..CheckOptions::default()
        },
    )
}

/// Compares backpropagated gradients of the mean softmax cross-entropy on
/// `(x, labels)` with central differences, parameter tensor by parameter
/// tensor. The model passed in is not modified.
pub fn check_model_with(model: &Model, x: &Tensor, labels: &[usize], opts: &CheckOptions) -> Result<GradReport> {
    let phase = audit_phase(model)?;
    let mut work = model.clone();
    // In training phase the first forward draws any missing frozen masks.
    let (base, base_sig) = batch_loss(&mut work, x, labels, phase)?;
    if !base.is_finite() {
        return Err(Error::Oracle("non-finite loss at the audit point".into()));
    }
    let floor = (f64::EPSILON * base.abs().max(1.0) / (opts.step * opts.tol)).max(REL_FLOOR);
    let mut ce = SoftmaxCE::new(work.classes());
    let logits = work.forward(x, phase, &mut rng::stream(0, Stream::Dropout))?;
    ce.forward(&logits, labels)?;
    work.backward(&ce.backward()?)?;
    let mut analytic: Vec<Tensor> = work.params().iter().map(|p| p.grad.clone()).collect();
    if let Some((idx, factor)) = opts.inject {
        let g = analytic.get_mut(idx).ok_or(Error::Index {
            what: "parameter tensor",
            index: idx,
            len: 0,
        })?;
        *g = g.scale(factor);
    }
    let owners: Vec<(usize, &'static str, &'static str, ParamKind)> = work
        .named_params()
        .iter()
        .map(|(i, p)| (*i, work.layers()[*i].kind(), p.name, p.kind))
        .collect();

    let mut sampler = rng::stream(opts.seed, Stream::Sampling);
    let mut tensors = Vec::new();
    for (pi, (layer, layer_kind, name, kind)) in owners.into_iter().enumerate() {
        let len = analytic[pi].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < len => {
                let mut c = sample(&mut sampler, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let (mut checked, mut excluded, mut floored, mut max_rel, mut sum_rel, mut worst) = (0, 0, 0, 0.0f64, 0.0, None);
        for &i in &coords {
            let orig = work.params()[pi].value.data()[i];
            let eval = |v: f64, work: &mut Model| -> Result<(f64, Vec<Vec<usize>>)> {
                work.params_mut()[pi].value.data_mut()[i] = v;
                batch_loss(work, x, labels, phase)
            };
            let (plus, sig_p) = eval(orig + opts.step, &mut work)?;
            let (minus, sig_m) = eval(orig - opts.step, &mut work)?;
            work.params_mut()[pi].value.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite loss perturbing layer {layer} {name}[{i}]"
                )));
            }
            if sig_p != base_sig || sig_m != base_sig {
                excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[pi].data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale < floor {
                floored += 1;
            }
            let rel = (a - numeric).abs() / scale.max(floor);
            checked += 1;
            sum_rel += rel;
            if worst.is_none() || rel > max_rel {
                max_rel = rel;
                worst = Some(i);
            }
        }
        tensors.push(TensorReport {
            layer,
            layer_kind,
            name,
            kind,
            checked,
            excluded,
            floored,
            max_rel,
            mean_rel: if checked > 0 { sum_rel / checked as f64 } else { 0.0 },
            worst_index: worst,
            passed: max_rel < opts.tol,
        });
    }
    Ok(GradReport {
        tol: opts.tol,
        step: opts.step,
        floor,
        tensors,
    })
}

/// One `(t, N, seed)` case of [`verify_closed_forms`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormCase {
    pub seed: u64,
    pub t: usize,
    pub n: usize,
    /// Closed-form weight gradient vs backprop, max abs difference.
    pub weight_vs_backprop: f64,
    /// Closed-form kernel gradient vs backprop (NS network), max relative.
    pub kernel_vs_backprop: f64,
    /// Closed-form kernel gradient vs finite differences (NS network).
    pub kernel_vs_fd: f64,
    /// Same two checks on the network without NS.
    pub plain_kernel_vs_backprop: f64,
    pub plain_kernel_vs_fd: f64,
    /// Kernel gradients changed by a logit-preserving perturbation of one
    /// weight slice: without NS, then with NS.
    pub changed_plain: usize,
    pub changed_ns: usize,
    /// `shared_slice / closed_form` ratio per kernel (expected `1 / beta_r`).
    pub coefficient_ratio: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormReport {
    pub cases: Vec<ClosedFormCase>,
}

impl ClosedFormReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failing_seeds(&self) -> Vec<(usize, usize, u64)> {
        self.cases.iter().filter(|c| !c.passed).map(|c| (c.t, c.n, c.seed)).collect()
    }
}

impl fmt::Display for ClosedFormReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>3} {:>3} {:>5} {:>11} {:>11} {:>11} {:>11} {:>11} {:>5} {:>5}  status",
            "t", "N", "seed", "W~bp", "K~bp", "K~fd", "K0~bp", "K0~fd", "chg0", "chgN"
        )?;
        for c in &self.cases {
            writeln!(
                f,
                "{:>3} {:>3} {:>5} {:>11.2e} {:>11.2e} {:>11.2e} {:>11.2e} {:>11.2e} {:>5} {:>5}  {}",
                c.t,
                c.n,
                c.seed,
                c.weight_vs_backprop,
                c.kernel_vs_backprop,
                c.kernel_vs_fd,
                c.plain_kernel_vs_backprop,
                c.plain_kernel_vs_fd,
                c.changed_plain,
                c.changed_ns,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

fn kernel_checks(net: &ToyNetwork, x: &Tensor, label: usize) -> Result<(Tensor, f64, f64)> {
    let t = net.t();
    let closed: Vec<f64> = (0..t)
        .map(|k| closed_form_kernel_grad(net, x, label, k).map(Tensor::into_data))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let closed = Tensor::new(net.kernels.shape().to_vec(), closed)?;
    let (bp, _, _) = backprop_toy(net, x, label)?;
    let fd = finite_diff(
        |k| {
            let mut n = net.clone();
            n.kernels.data_mut().copy_from_slice(k);
            n.loss(x, label)
        },
        net.kernels.data(),
        1e-5,
    )?;
    let fd = Tensor::new(net.kernels.shape().to_vec(), fd)?;
    Ok((closed.clone(), max_rel_diff(&closed, &bp), max_rel_diff(&closed, &fd)))
}

/// Perturbs weight slice `slice` along a pixel direction orthogonal to the
/// slice's input, which leaves the logits unchanged, and counts kernels whose
/// gradient moves.
fn locality(net: &ToyNetwork, x: &Tensor, label: usize, slice: usize) -> Result<usize> {
    let p = net.map_len();
    let c = net.features(x)?;
    let cj = &c.data()[slice * p..(slice + 1) * p];
    // u = e_0 * |c|^2 - c * c_0 is orthogonal to c (or e_0 when c = 0)
    let norm2: f64 = cj.iter().map(|v| v * v).sum();
    let mut u: Vec<f64> = cj.iter().map(|v| -v * cj[0]).collect();
    u[0] += if norm2 > 0.0 { norm2 } else { 1.0 };
    let before: Vec<Tensor> = (0..net.t())
        .map(|k| closed_form_kernel_grad(net, x, label, k))
        .collect::<Result<_>>()?;
    let mut moved = net.clone();
    for (px, &uv) in u.iter().enumerate() {
        let row = (slice * p + px) * crate::closed_form::TOY_CLASSES;
        for o in 0..crate::closed_form::TOY_CLASSES {
            moved.weight.data_mut()[row + o] += uv * (o as f64 + 1.0) * 0.3;
        }
    }
    let drift = moved.logits(x)?.max_abs_diff(&net.logits(x)?);
    if drift > 1e-9 {
        return Err(Error::Oracle(format!("locality perturbation changed the logits by {drift:e}")));
    }
    let mut changed = 0;
    for (k, b) in before.iter().enumerate() {
        let a = closed_form_kernel_grad(&moved, x, label, k)?;
        if a.max_abs_diff(b) > 1e-9 * (1.0 + b.max_abs()) {
            changed += 1;
        }
    }
    Ok(changed)
}

/// Builds the toy network for every `(t, N)` pair and seed and checks the
/// closed forms against backprop and finite differences, plus the weight
/// sharing pattern. Uses a 4x4 input and 3x3 kernels.
pub fn verify_closed_forms(seeds: u64, configs: &[(usize, usize)]) -> Result<ClosedFormReport> {
    let mut cases = Vec::new();
    for &(t, n) in configs {
        for seed in 0..seeds {
            let mut rng = rng::stream(seed, Stream::Data);
            let ns = ToyNetwork::random(t, Some(n), (4, 4), (3, 3), &mut rng)?;
            let mut plain = ns.clone();
            plain.beta = None;
            let x = Tensor::randn(&[4, 4], 1.0, &mut rng);
            let label = (seed as usize) % crate::closed_form::TOY_CLASSES;

            let mut weight_err = 0.0f64;
            for net in [&ns, &plain] {
                let (_, bp_w, logits) = backprop_toy(net, &x, label)?;
                let c = net.features(&x)?;
                let p = net.map_len();
                for l in 0..t {
                    let closed = closed_form_weight_grad(&c, &logits, label, l, p)?;
                    let bp = Tensor::new(vec![p, 10], bp_w.data()[l * p * 10..(l + 1) * p * 10].to_vec())?;
                    weight_err = weight_err.max(closed.max_abs_diff(&bp));
                }
            }
            let (closed_ns, k_bp, k_fd) = kernel_checks(&ns, &x, label)?;
            let (_, k0_bp, k0_fd) = kernel_checks(&plain, &x, label)?;
            let changed_plain = locality(&plain, &x, label, 0)?;
            let changed_ns = locality(&ns, &x, label, 0)?;
            let mmn = 9;
            let coefficient_ratio = (0..t)
                .map(|k| {
                    let shared = shared_slice_kernel_grad(&ns, &x, label, k)?;
                    let closed = &closed_ns.data()[k * mmn..(k + 1) * mmn];
                    let (num, den) = shared
                        .data()
                        .iter()
                        .zip(closed)
                        .fold((0.0, 0.0), |(a, b), (&s, &c)| (a + s * c, b + c * c));
                    Ok(if den > 0.0 { num / den } else { f64::NAN })
                })
                .collect::<Result<Vec<f64>>>()?;
            let passed = weight_err < 1e-12
                && k_bp < 1e-10
                && k_fd < 1e-6
                && k0_bp < 1e-10
                && k0_fd < 1e-6
                && changed_plain == 1
                && changed_ns == n;
            cases.push(ClosedFormCase {
                seed,
                t,
                n,
                weight_vs_backprop: weight_err,
                kernel_vs_backprop: k_bp,
                kernel_vs_fd: k_fd,
                plain_kernel_vs_backprop: k0_bp,
                plain_kernel_vs_fd: k0_fd,
                changed_plain,
                changed_ns,
                coefficient_ratio,
                passed,
            });
        }
    }
    Ok(ClosedFormReport { cases })
}

/// A small network exercising one combination of layer kinds.
#[derive(Clone, Debug)]
pub struct AuditCase {
    pub name: &'static str,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub ns: NsConfig,
    pub beta_init: f64,
}

impl AuditCase {
    /// Instantiates the network for `seed`; dropout layers are frozen so the
    /// audit can replay their masks.
    pub fn build(&self, seed: u64) -> Result<Model> {
        let mut rng = rng::stream(seed, Stream::Init);
        let mut model = build_layers(&self.layers, &self.ns, self.beta_init, self.input_shape.clone(), &mut rng)?;
        for layer in model.layers_mut() {
            if let Layer::Dropout(d) = layer {
                d.set_frozen(true);
            }
        }
        Ok(model)
    }

    /// A random batch of `batch` inputs with labels.
    pub fn batch(&self, seed: u64, batch: usize) -> Result<(Tensor, Vec<usize>)> {
        let mut rng = rng::stream(seed, Stream::Data);
        let shape: Vec<usize> = std::iter::once(batch).chain(self.input_shape.iter().copied()).collect();
        let x = Tensor::uniform(&shape, 0.0, 1.0, &mut rng);
        let labels = (0..batch).map(|_| rng.random_range(0..10)).collect();
        Ok((x, labels))
    }
}

fn ns(n: usize, mode: NsMode) -> NsConfig {
    NsConfig {
        enabled: true,
        n,
        mode,
        beta_init: None,
    }
}

/// Every layer combination the presets can produce, scaled down so all
/// coordinates can be checked.
pub fn audit_cases() -> Vec<AuditCase> {
    use LayerSpec::*;
    let conv = |out_channels, kernel, mode| Conv {
        out_channels,
        kernel,
        mode,
        bias: true,
    };
    let off = NsConfig::default();
    vec![
        AuditCase {
            name: "dense",
            input_shape: vec![1, 6, 6],
            layers: vec![Flatten, Dense { units: 12 }, Relu, Dense { units: 10 }],
            ns: off.clone(),
            beta_init: 1.0,
        },
        AuditCase {
            name: "conv_valid_pool",
            input_shape: vec![1, 8, 8],
            layers: vec![conv(4, 3, ConvMode::Valid), Relu, MaxPool, Flatten, Dense { units: 10 }],
            ns: off.clone(),
            beta_init: 1.0,
        },
        AuditCase {
            name: "conv_same_lrn_fns",
            input_shape: vec![2, 6, 6],
            layers: vec![conv(4, 3, ConvMode::Same), Relu, Lrn, MaxPool, Ns, Dense { units: 10 }],
            ns: ns(2, NsMode::Fixed),
            beta_init: 0.25,
        },
        AuditCase {
            name: "conv_tns_dropout",
            input_shape: vec![1, 8, 8],
            layers: vec![
                conv(8, 3, ConvMode::Same),
                Relu,
                MaxPool,
                Ns,
                Dropout { keep_rate: 0.5 },
                Flatten,
                Dense { units: 16 },
                Relu,
                Dense { units: 10 },
            ],
            ns: ns(4, NsMode::Trainable),
            beta_init: 0.25,
        },
        AuditCase {
            name: "mlp_lrn_tns",
            input_shape: vec![1, 6, 6],
            layers: vec![
                Flatten,
                Dense { units: 36 },
                Relu,
                Reshape { shape: vec![4, 3, 3] },
                Lrn,
                Flatten,
                Ns,
                Dense { units: 10 },
            ],
            ns: ns(2, NsMode::Trainable),
            beta_init: 1.0,
        },
        AuditCase {
            name: "lenet_like",
            input_shape: vec![1, 12, 12],
            layers: vec![
                conv(3, 5, ConvMode::Same),
                Relu,
                MaxPool,
                conv(4, 3, ConvMode::Valid),
                Relu,
                MaxPool,
                Ns,
                Dropout { keep_rate: 0.5 },
                Flatten,
                Dense { units: 8 },
                Relu,
                Dense { units: 6 },
                Relu,
                Dense { units: 10 },
            ],
            ns: ns(2, NsMode::Trainable),
            beta_init: 0.25,
        },
    ]
}

/// One audited `(case, seed)` pair.
#[derive(Clone, Debug)]
pub struct AuditRun {
    pub case: &'static str,
    pub seed: u64,
    pub report: GradReport,
}

/// Runs [`check_model_with`] for every case and seed on a batch of
/// `batch` random inputs.
pub fn run_audit_suite(cases: &[AuditCase], seeds: std::ops::Range<u64>, batch: usize, opts: &CheckOptions) -> Result<Vec<AuditRun>> {
    let mut runs = Vec::new();
    for case in cases {
        for seed in seeds.clone() {
            let model = case.build(seed)?;
            let (x, labels) = case.batch(seed, batch)?;
            let report = check_model_with(&model, &x, &labels, &CheckOptions { seed, ..opts.clone() })?;
            runs.push(AuditRun {
                case: case.name,
                seed,
                report,
            });
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_and_linear_are_exact() {
        let g = finite_diff(|p| Ok(0.5 * p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9);
        let g = finite_diff(|p| Ok(2.0 * p[0] + 7.0), &[-1.5], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        let g = finite_diff(|_| Ok(4.0), &[1.0, 2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_loss_is_an_oracle_error() {
        let r = finite_diff(|p| Ok(if p[0] > 0.0 { f64::INFINITY } else { 0.0 }), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Oracle(_))));
        assert!(finite_diff(|_| Ok(0.0), &[0.0], 0.0).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_fold_paths_agree() {
        let r = verify_closed_forms(3, &[(2, 1)]).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.cases.iter().all(|c| c.changed_ns == 1));
    }
}
