use num::{BigInt, BigRational, Zero};
use proptest::prelude::*;

use nsfold::config::{build_layers, LayerSpec, NsConfig};
use nsfold::gradcheck::{check_model, finite_diff, relative_error};
use nsfold::layers::{Layer, Phase};
use nsfold::minima::{build_baseline_system, build_ns_system, rank_nullity, LinearSystem};
use nsfold::nsfold::{ns_backward, ns_forward, NsLayer, NsMode};
use nsfold::rng::{self, seeded, Stream};
use nsfold::tensor::{conv2d_multi, matmul, max_pool2d, ConvMode, Tensor};

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut seeded(seed))
}

/// `(t, N)` with `N | t`.
fn fold_shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=4).prop_map(|(s, n)| (s * n, n))
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn ns_output_is_n_identical_segments((t, n) in fold_shape(), hw in 1usize..5, seed in any::<u64>()) {
        let x = randn(&[t, hw, hw], seed);
        let mut ns = NsLayer::uniform(t, n, 0.3, NsMode::Fixed).unwrap();
        let y = ns_forward(&x, &mut ns).unwrap();
        prop_assert_eq!(y.shape(), &[1, t * hw * hw]);
        let seg = y.len() / n;
        for k in 1..n {
            prop_assert_eq!(&y.data()[..seg], &y.data()[k * seg..(k + 1) * seg]);
        }
    }

    #[test]
    fn ns_is_linear_and_homogeneous_in_beta((t, n) in fold_shape(), seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
        let x1 = randn(&[t, 3, 2], seed);
        let x2 = randn(&[t, 3, 2], seed ^ 1);
        let beta: Vec<f64> = randn(&[n], seed ^ 2).into_data();
        let mut ns = NsLayer::new(t, n, beta.clone(), NsMode::Fixed).unwrap();
        let y1 = ns_forward(&x1, &mut ns).unwrap();
        let y2 = ns_forward(&x2, &mut ns).unwrap();
        let mix = x1.scale(a).add(&x2.scale(c)).unwrap();
        let ym = ns_forward(&mix, &mut ns).unwrap();
        let expect = y1.scale(a).add(&y2.scale(c)).unwrap();
        prop_assert!(ym.max_abs_diff(&expect) < 1e-12 * (1.0 + expect.max_abs()));
        let scaled: Vec<f64> = beta.iter().map(|b| b * a).collect();
        let mut ns_a = NsLayer::new(t, n, scaled, NsMode::Fixed).unwrap();
        let ya = ns_forward(&x1, &mut ns_a).unwrap();
        prop_assert!(ya.max_abs_diff(&y1.scale(a)) < 1e-12 * (1.0 + y1.max_abs()));
    }

    #[test]
    fn ns_gradients_match_finite_differences((t, n) in fold_shape(), seed in 0u64..1000) {
        let x = randn(&[t, 2, 2], seed);
        let beta: Vec<f64> = randn(&[n], seed + 7).into_data();
        let c = randn(&[1, t * 4], seed + 9);
        let mut ns = NsLayer::new(t, n, beta.clone(), NsMode::Trainable).unwrap();
        ns_forward(&x, &mut ns).unwrap();
        let g = ns_backward(&c, &mut ns).unwrap();
        let loss_x = |v: &[f64]| {
            let mut l = NsLayer::new(t, n, beta.clone(), NsMode::Fixed)?;
            Ok(ns_forward(&Tensor::new(vec![t, 2, 2], v.to_vec())?, &mut l)?.dot(&c))
        };
        let fd = finite_diff(loss_x, x.data(), 1e-5).unwrap();
        for (a, f) in g.fms.data().iter().zip(&fd) {
            prop_assert!((a - f).abs() < 1e-8, "{a} vs {f}");
        }
        let loss_b = |b: &[f64]| {
            let mut l = NsLayer::new(t, n, b.to_vec(), NsMode::Fixed)?;
            Ok(ns_forward(&x, &mut l)?.dot(&c))
        };
        let fd = finite_diff(loss_b, &beta, 1e-5).unwrap();
        for (a, f) in g.beta.unwrap().iter().zip(&fd) {
            prop_assert!(relative_error(*a, *f) < 1e-6 || (a - f).abs() < 1e-8, "{a} vs {f}");
        }
    }

    #[test]
    fn conv_is_bilinear(c in 1usize..3, t in 1usize..4, h in 3usize..7, k in 1usize..4, seed in any::<u64>(), a in -2.0f64..2.0) {
        let x1 = randn(&[c, h, h], seed);
        let x2 = randn(&[c, h, h], seed ^ 3);
        let k1 = randn(&[t, c, k, k], seed ^ 5);
        let k2 = randn(&[t, c, k, k], seed ^ 7);
        for mode in [ConvMode::Valid, ConvMode::Same] {
            let lhs = conv2d_multi(&x1.add(&x2.scale(a)).unwrap(), &k1, mode).unwrap();
            let rhs = conv2d_multi(&x1, &k1, mode).unwrap().add(&conv2d_multi(&x2, &k1, mode).unwrap().scale(a)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
            let lhs = conv2d_multi(&x1, &k1.add(&k2.scale(a)).unwrap(), mode).unwrap();
            let rhs = conv2d_multi(&x1, &k1, mode).unwrap().add(&conv2d_multi(&x1, &k2, mode).unwrap().scale(a)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
        }
    }

    #[test]
    fn same_equals_valid_on_zero_padded_input(c in 1usize..3, h in 2usize..7, w in 2usize..7, kh in 1usize..5, kw in 1usize..5, seed in any::<u64>()) {
        let x = randn(&[c, h, w], seed);
        let k = randn(&[2, c, kh, kw], seed ^ 11);
        let (pt, pb) = ConvMode::Same.padding(kh);
        let (pl, pr) = ConvMode::Same.padding(kw);
        let (ph, pw) = (h + pt + pb, w + pl + pr);
        let mut padded = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    padded.set(&[ch, i + pt, j + pl], x.get(&[ch, i, j]));
                }
            }
        }
        let same = conv2d_multi(&x, &k, ConvMode::Same).unwrap();
        let valid = conv2d_multi(&padded, &k, ConvMode::Valid).unwrap();
        prop_assert_eq!(same.shape(), &[2, h, w]);
        prop_assert!(same.max_abs_diff(&valid) < 1e-12);
    }

    #[test]
    fn matmul_matches_naive_and_distributes(p in 1usize..9, q in 1usize..9, r in 1usize..9, seed in any::<u64>()) {
        let a = randn(&[p, q], seed);
        let b = randn(&[q, r], seed ^ 1);
        let c = randn(&[q, r], seed ^ 2);
        let ab = matmul(&a, &b).unwrap();
        for i in 0..p {
            for j in 0..r {
                let naive: f64 = (0..q).map(|k| a.get(&[i, k]) * b.get(&[k, j])).sum();
                prop_assert!((ab.get(&[i, j]) - naive).abs() < 1e-12);
            }
        }
        let lhs = matmul(&a, &b.add(&c).unwrap()).unwrap();
        let rhs = ab.add(&matmul(&a, &c).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        let mut eye = Tensor::zeros(&[q, q]);
        for i in 0..q {
            eye.set(&[i, i], 1.0);
        }
        prop_assert_eq!(matmul(&a, &eye).unwrap(), a);
    }

    #[test]
    fn pool_output_is_the_window_max_at_argmax(c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let x = randn(&[c, 2 * h, 2 * w], seed);
        let pooled = max_pool2d(&x).unwrap();
        prop_assert_eq!(pooled.output.shape(), &[c, h, w]);
        for (o, (&v, &idx)) in pooled.output.data().iter().zip(&pooled.argmax).enumerate() {
            prop_assert_eq!(v, x.data()[idx]);
            let (ch, i, j) = (o / (h * w), (o / w) % h, o % w);
            for di in 0..2 {
                for dj in 0..2 {
                    prop_assert!(x.get(&[ch, 2 * i + di, 2 * j + dj]) <= v);
                }
            }
        }
    }

    #[test]
    fn rank_matches_exact_rational_elimination(rows in 1usize..=20, cols in 1usize..=110, inner in 1usize..=20, seed in any::<u64>()) {
        // integer product L R of inner width `inner` has rank <= inner
        let mut rng = seeded(seed);
        let l: Vec<i64> = (0..rows * inner).map(|_| rand::Rng::random_range(&mut rng, -3..=3)).collect();
        let r: Vec<i64> = (0..inner * cols).map(|_| rand::Rng::random_range(&mut rng, -3..=3)).collect();
        let m: Vec<Vec<i64>> = (0..rows)
            .map(|i| (0..cols).map(|j| (0..inner).map(|k| l[i * inner + k] * r[k * cols + j]).sum()).collect())
            .collect();
        let system = LinearSystem {
            rows: m.iter().map(|row| row.iter().map(|&v| v as f64).collect()).collect(),
            cols,
            labels: Vec::new(),
            kinds: Vec::new(),
        };
        let (rank, nullity) = rank_nullity(&system);
        prop_assert_eq!(rank, exact_rank(&m));
        prop_assert_eq!(rank + nullity, cols);
    }
}

fn exact_rank(m: &[Vec<i64>]) -> usize {
    exact_rank_of(
        m.iter()
            .map(|row| row.iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect())
            .collect(),
    )
}

fn exact_rank_of(mut a: Vec<Vec<BigRational>>) -> usize {
    let (rows, cols) = (a.len(), a.first().map_or(0, Vec::len));
    let mut rank = 0;
    for col in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        for r in 0..rows {
            if r != rank && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[rank][col];
                for c in col..cols {
                    let sub = &f * &a[rank][c];
                    a[r][c] -= sub;
                }
            }
        }
        rank += 1;
    }
    rank
}

proptest! {
    #![proptest_config(cfg())]

    /// Entries drawn from the values the stationarity systems contain;
    /// dependent rows come from copies and negations.
    #[test]
    fn rank_matches_exact_elimination_on_system_entries(
        rows in 1usize..=20,
        cols in 1usize..=110,
        beta in 0.05f64..3.0,
        density in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        // index 0 is zero; the oracle sees the intended decimals, not their
        // binary approximations
        let values = [0.0, 1.0, -1.0, 0.1, -0.1, 0.1 - 1.0, beta, -beta];
        let ratio = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
        let b = BigRational::from_float(beta).unwrap();
        let exact = [ratio(0, 1), ratio(1, 1), ratio(-1, 1), ratio(1, 10), ratio(-1, 10), ratio(-9, 10), b.clone(), -b];
        let mut rng = seeded(seed);
        let mut idx: Vec<Vec<usize>> = Vec::with_capacity(rows);
        for _ in 0..rows {
            let row = if !idx.is_empty() && rng.random_bool(0.3) {
                let src = idx[rng.random_range(0..idx.len())].clone();
                // negation swaps the paired indices (and leaves 0.1 - 1 alone)
                if rng.random_bool(0.5) {
                    src.iter().map(|&i| match i { 1 => 2, 2 => 1, 3 => 4, 4 => 3, 6 => 7, 7 => 6, i => i }).collect()
                } else {
                    src
                }
            } else {
                (0..cols)
                    .map(|_| if rng.random_bool(density) { rng.random_range(1..values.len()) } else { 0 })
                    .collect()
            };
            idx.push(row);
        }
        let m: Vec<Vec<f64>> = idx.iter().map(|r| r.iter().map(|&i| values[i]).collect()).collect();
        let q: Vec<Vec<BigRational>> = idx.iter().map(|r| r.iter().map(|&i| exact[i].clone()).collect()).collect();
        let system = LinearSystem { rows: m, cols, labels: Vec::new(), kinds: Vec::new() };
        prop_assert_eq!(rank_nullity(&system).0, exact_rank_of(q));
    }
}

#[test]
fn minima_system_ranks_match_exact_elimination() {
    // scale by 10 so the balance coefficients are integers
    let to_int = |s: &LinearSystem| -> Vec<Vec<i64>> {
        s.rows.iter().map(|r| r.iter().map(|v| (v * 10.0).round() as i64).collect()).collect()
    };
    for t in [2, 4, 8] {
        let b = build_baseline_system(t).unwrap();
        assert_eq!(rank_nullity(&b).0, exact_rank(&to_int(&b)));
        for n in [2, 4].into_iter().filter(|n| t % n == 0) {
            let bp = build_ns_system(t, n, &vec![1.0; n]).unwrap();
            assert_eq!(rank_nullity(&bp).0, exact_rank(&to_int(&bp)));
        }
    }
}

#[test]
fn ns_gradients_hold_for_twenty_seeds() {
    for seed in 0..20 {
        let x = randn(&[8, 3, 3], seed);
        let beta: Vec<f64> = randn(&[4], seed + 100).into_data();
        let c = randn(&[1, 72], seed + 200);
        let mut ns = NsLayer::new(8, 4, beta.clone(), NsMode::Trainable).unwrap();
        ns_forward(&x, &mut ns).unwrap();
        let g = ns_backward(&c, &mut ns).unwrap();
        let fd = finite_diff(
            |v| {
                let mut l = NsLayer::new(8, 4, beta.clone(), NsMode::Fixed)?;
                Ok(ns_forward(&Tensor::new(vec![8, 3, 3], v.to_vec())?, &mut l)?.dot(&c))
            },
            x.data(),
            1e-5,
        )
        .unwrap();
        let worst = g.fms.data().iter().zip(&fd).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "seed {seed}: {worst}");
    }
}

/// Each layer kind alone (plus the dense head it needs) against finite
/// differences, over several seeds.
#[test]
fn single_layer_gradchecks() {
    use LayerSpec::*;
    let conv = |mode| Conv {
        out_channels: 3,
        kernel: 3,
        mode,
        bias: true,
    };
    let ns = NsConfig {
        enabled: true,
        n: 2,
        mode: NsMode::Trainable,
        beta_init: None,
    };
    let cases: Vec<(&str, Vec<LayerSpec>)> = vec![
        ("dense", vec![Flatten, Dense { units: 10 }]),
        ("conv_valid", vec![conv(ConvMode::Valid), Flatten, Dense { units: 10 }]),
        ("conv_same", vec![conv(ConvMode::Same), Flatten, Dense { units: 10 }]),
        ("relu", vec![Flatten, Dense { units: 8 }, Relu, Dense { units: 10 }]),
        ("pool", vec![conv(ConvMode::Same), MaxPool, Flatten, Dense { units: 10 }]),
        ("lrn", vec![conv(ConvMode::Same), Lrn, Flatten, Dense { units: 10 }]),
        ("ns", vec![Reshape { shape: vec![4, 2, 2] }, Ns, Dense { units: 10 }]),
    ];
    for (name, specs) in cases {
        for seed in 0..5 {
            let model = build_layers(&specs, &ns, 0.5, vec![1, 4, 4], &mut rng::stream(seed, Stream::Init)).unwrap();
            let x = Tensor::uniform(&[2, 1, 4, 4], -1.0, 1.0, &mut rng::stream(seed, Stream::Data));
            let report = check_model(&model, &x, &[1, 8], 1e-5).unwrap();
            assert!(report.passed(), "{name} seed {seed}\n{report}");
        }
    }
}

#[test]
fn frozen_dropout_gradcheck_and_mixed_freeze_error() {
    use LayerSpec::*;
    let specs = vec![Flatten, Dense { units: 12 }, Relu, Dropout { keep_rate: 0.5 }, Dense { units: 6 }, Dropout { keep_rate: 0.5 }, Dense { units: 10 }];
    let mut model = build_layers(&specs, &NsConfig::default(), 1.0, vec![1, 3, 3], &mut seeded(3)).unwrap();
    let x = Tensor::uniform(&[3, 1, 3, 3], 0.0, 1.0, &mut seeded(4));
    let mut frozen = 0;
    for layer in model.layers_mut() {
        if let Layer::Dropout(d) = layer {
            if frozen == 0 {
                d.set_frozen(true);
            }
            frozen += 1;
        }
    }
    assert!(check_model(&model, &x, &[0, 1, 2], 1e-5).is_err());
    for layer in model.layers_mut() {
        if let Layer::Dropout(d) = layer {
            d.set_frozen(true);
        }
    }
    let report = check_model(&model, &x, &[0, 1, 2], 1e-5).unwrap();
    assert!(report.passed(), "{report}");
    // the audit leaves the caller's model untouched
    let before = model.clone().forward(&x, Phase::Eval, &mut seeded(0)).unwrap();
    check_model(&model, &x, &[0, 1, 2], 1e-5).unwrap();
    assert_eq!(model.clone().forward(&x, Phase::Eval, &mut seeded(0)).unwrap(), before);
}
