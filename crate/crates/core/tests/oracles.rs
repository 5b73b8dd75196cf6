//! Independent reference computations checked against the library.

#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepcoda::coda::LabelVector;
use deepcoda::eval;
use deepcoda::explain;
use deepcoda::lasso::{self, CvConfig, Transform};
use deepcoda::net::{self, DeepCodaParams, Head};
use deepcoda::synth;
use deepcoda::train::{self, TrainConfig};
use deepcoda::{io, Matrix};

fn random_params(rng: &mut ChaCha8Rng, d: usize, b: usize, h: usize, head: Head) -> DeepCodaParams {
    let mut p = DeepCodaParams::zeros(d, b, h, head);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    p.linear_v0 = rng.random_range(-1.0..1.0);
    p
}

/// Straight-line scalar forward pass, written from the model definition.
fn reference_logit(p: &DeepCodaParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let (d, b, h) = (p.n_features, p.n_bottlenecks, p.hidden);
    let mut z = vec![0.0; b];
    for k in 0..b {
        let mut acc = p.beta0[k];
        for j in 0..d {
            acc += p.beta[j * b + k] * x[j].ln();
        }
        z[k] = acc;
    }
    let w = match p.head {
        Head::SelfExplain => {
            let mut hidden = vec![0.0; h];
            for u in 0..h {
                let mut a = p.mlp_b1[u];
                for k in 0..b {
                    a += z[k] * p.mlp_w1[k * h + u];
                }
                hidden[u] = if a > 0.0 { a } else { 0.0 };
            }
            (0..b)
                .map(|k| {
                    let mut o = p.mlp_b2[k];
                    for u in 0..h {
                        o += hidden[u] * p.mlp_w2[u * b + k];
                    }
                    o
                })
                .collect()
        }
        Head::Linear => p.linear_v.clone(),
    };
    let mut s = if p.head == Head::Linear { p.linear_v0 } else { 0.0 };
    for k in 0..b {
        s += w[k] * z[k];
    }
    (z, w, s)
}

fn reference_loss(p: &DeepCodaParams, x: &Matrix, y: &[u8], lc: f64, ls: f64) -> f64 {
    let mut fit = 0.0;
    for i in 0..x.rows() {
        let (_, _, s) = reference_logit(p, x.row(i));
        let yhat = 1.0 / (1.0 + (-s).exp());
        fit += (yhat - f64::from(y[i])).powi(2);
    }
    let (d, b) = (p.n_features, p.n_bottlenecks);
    let mut constraint = 0.0;
    for k in 0..b {
        let col: f64 = (0..d).map(|j| p.beta[j * b + k]).sum();
        constraint += col * col;
    }
    let l1: f64 = p.beta.iter().map(|v| v.abs()).sum();
    fit + lc * constraint + ls * l1
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Matrix, LabelVector) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0.01..10.0)).collect())
        .collect();
    let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    y[0] = 0;
    y[1] = 1;
    (Matrix::from_rows(&rows).unwrap(), LabelVector::new(y).unwrap())
}

#[test]
fn forward_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let head = if trial % 2 == 0 { Head::SelfExplain } else { Head::Linear };
        let d = rng.random_range(2..12);
        let b = rng.random_range(1..6);
        let p = random_params(&mut rng, d, b, net::HIDDEN, head);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..10.0)).collect();
        let t = net::forward(&p, &x).unwrap();
        let (z, w, s) = reference_logit(&p, &x);
        for k in 0..b {
            assert!((t.z[k] - z[k]).abs() < 1e-12);
            assert!((t.w[k] - w[k]).abs() < 1e-12);
        }
        assert!((t.s - s).abs() < 1e-12);
        assert!((t.yhat - 1.0 / (1.0 + (-s).exp())).abs() < 1e-12);
    }
}

#[test]
fn loss_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..30 {
        let head = if trial % 2 == 0 { Head::SelfExplain } else { Head::Linear };
        let (n, d, b) = (rng.random_range(2..40), rng.random_range(2..10), rng.random_range(1..5));
        let p = random_params(&mut rng, d, b, net::HIDDEN, head);
        let (x, y) = random_problem(&mut rng, n, d);
        let got = net::loss(&p, &x, &y, 1.0, 0.01).unwrap();
        let want = reference_loss(&p, &x, y.as_slice(), 1.0, 0.01);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn loss_is_invariant_to_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_params(&mut rng, 6, 3, net::HIDDEN, Head::SelfExplain);
    let (x, y) = random_problem(&mut rng, 150, 6);
    let mut order: Vec<usize> = (0..150).collect();
    order.reverse();
    order.swap(3, 77);
    let xp = x.select_rows(&order);
    let yp = y.select(&order);
    let a = net::loss(&p, &x, &y, 1.0, 0.01).unwrap();
    let b = net::loss(&p, &xp, &yp, 1.0, 0.01).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
}

#[test]
fn rescaling_shifts_contrasts_by_residual_times_log_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = random_params(&mut rng, 5, 4, net::HIDDEN, Head::SelfExplain);
    let residuals = p.constraint_residuals();
    for _ in 0..200 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..10.0)).collect();
        let c: f64 = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = net::forward(&p, &x).unwrap().z;
        let b = net::forward(&p, &scaled).unwrap().z;
        for k in 0..4 {
            let gap = b[k] - a[k];
            assert!((gap - residuals[k] * c.ln()).abs() < 1e-9);
            assert!(gap.abs() <= residuals[k].abs() * c.ln().abs() + 1e-9);
        }
    }
}

#[test]
fn lasso_without_penalty_matches_gradient_descent() {
    // Plain gradient descent on the unpenalized mean log-loss as a generic reference.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (x, y) = random_problem(&mut rng, 60, 3);
    let logx = net::log_matrix(&x).unwrap();
    let yv = y.as_f64();
    let (mut w, mut w0) = (vec![0.0; 3], 0.0);
    let n = 60.0;
    for _ in 0..200_000 {
        let mut g = [0.0; 3];
        let mut g0 = 0.0;
        for i in 0..60 {
            let r = logx.row(i);
            let s = w0 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let e = 1.0 / (1.0 + (-s).exp()) - yv[i];
            for j in 0..3 {
                g[j] += e * r[j] / n;
            }
            g0 += e / n;
        }
        for j in 0..3 {
            w[j] -= 0.5 * g[j];
        }
        w0 -= 0.5 * g0;
    }
    let m = lasso::lasso_logistic_fit(&logx, &y, 0.0).unwrap();
    let reference = lasso::objective(&logx, &y, &w, w0, 0.0);
    let got = lasso::objective(&logx, &y, &m.coef, m.intercept, 0.0);
    assert!(got <= reference + 1e-8, "{got} vs {reference}");
    for j in 0..3 {
        assert!((m.coef[j] - w[j]).abs() < 1e-3, "{:?} vs {w:?}", m.coef);
    }
}

#[test]
fn cv_lasso_generalizes_on_toy() {
    let ds = synth::gen_toy(400, 5).unwrap();
    let (train_idx, test_idx) = eval::split(400, 0.25, 5).unwrap();
    let xtr = ds.relative.select_samples(&train_idx);
    let xte = ds.relative.select_samples(&test_idx);
    let m = lasso::fit_cv(&xtr, &ds.labels.select(&train_idx), Transform::Clr, &CvConfig::default())
        .unwrap();
    let scores = lasso::score(&m, &xte).unwrap();
    assert!(eval::auc(&scores, &ds.labels.select(&test_idx)).unwrap() > 0.9);
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms(
        scores in prop::collection::vec(-5.0f64..5.0, 4..40),
        bits in prop::collection::vec(any::<bool>(), 40),
        a in 0.1f64..10.0,
        c in -3.0f64..3.0,
    ) {
        let mut labels: Vec<u8> = bits[..scores.len()].iter().map(|&b| u8::from(b)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let y = LabelVector::new(labels).unwrap();
        let base = eval::auc(&scores, &y).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + c).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        prop_assert_eq!(base, eval::auc(&affine, &y).unwrap());
        prop_assert_eq!(base, eval::auc(&cubed, &y).unwrap());
    }

    #[test]
    fn canonical_correlations_are_affine_invariant(
        seed in any::<u64>(),
        scale in prop::collection::vec(0.5f64..4.0, 6),
        shift in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w: Vec<Vec<f64>> = z
            .iter()
            .map(|r| vec![r[0] + 0.3 * rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), r[2] - r[1]])
            .collect();
        let zt: Vec<Vec<f64>> = z.iter().map(|r| (0..3).map(|k| scale[k] * r[k] + shift[k]).collect()).collect();
        let wt: Vec<Vec<f64>> = w.iter().map(|r| (0..3).map(|k| scale[k + 3] * r[k] + shift[k + 3]).collect()).collect();
        let a = explain::weight_contrast_correlation(&Matrix::from_rows(&w).unwrap(), &Matrix::from_rows(&z).unwrap()).unwrap();
        let b = explain::weight_contrast_correlation(&Matrix::from_rows(&wt).unwrap(), &Matrix::from_rows(&zt).unwrap()).unwrap();
        for (x, y) in a.canonical.iter().zip(&b.canonical) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn canonical_correlation_null_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (n, b) = (1000, 5);
    let draw = |rng: &mut ChaCha8Rng| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..b).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Matrix::from_rows(&rows).unwrap()
    };
    for _ in 0..5 {
        let (w, z) = (draw(&mut rng), draw(&mut rng));
        let c = explain::weight_contrast_correlation(&w, &z).unwrap();
        assert!(c.canonical[0] < 0.3, "{:?}", c.canonical);
    }
}

#[test]
fn trained_toy_contrast_involves_constant_feature() {
    let ds = synth::gen_toy(1000, 21).unwrap();
    let cfg = TrainConfig {
        n_bottlenecks: 1,
        seed: 2,
        ..TrainConfig::default()
    };
    let r = train::train(ds.relative.values(), &ds.labels, &cfg).unwrap();
    let m = explain::contrast_membership(
        &r.params,
        0,
        ds.relative.feature_names(),
        explain::DEFAULT_MEMBERSHIP_THRESHOLD,
    )
    .unwrap();
    let constant = &ds.relative.feature_names()[ds.constant_feature_index];
    let top = &m.entries[0];
    assert_eq!(&top.feature, constant, "{m:?}");
    // The constant part sits on the opposite side of the varying ones.
    let others: Vec<_> = m.entries.iter().filter(|e| &e.feature != constant).collect();
    assert!(!others.is_empty());
    assert!(others.iter().all(|e| e.power.signum() != top.power.signum()), "{m:?}");
    // Membership depends on parameters only, not on sample order.
    let again = explain::contrast_membership(
        &r.params,
        0,
        ds.relative.feature_names(),
        explain::DEFAULT_MEMBERSHIP_THRESHOLD,
    )
    .unwrap();
    assert_eq!(m, again);
}

#[test]
fn report_round_trips_at_full_precision() {
    let ds = synth::gen_cmyc(100, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = random_params(&mut rng, 10, 3, net::HIDDEN, Head::SelfExplain);
    let ex = explain::explain_all(&p, ds.relative.values(), ds.relative.sample_ids()).unwrap();
    let report = explain::render_report(&ex, &[], None);
    let mut lines = report.explanations_csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let prob_col = header.iter().position(|h| *h == "prob").unwrap();
    for (line, e) in lines.zip(&ex) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], e.sample_id);
        for k in 0..3 {
            assert_eq!(fields[1 + k].parse::<f64>().unwrap(), e.z[k]);
            assert_eq!(fields[4 + k].parse::<f64>().unwrap(), e.w[k]);
            assert_eq!(fields[7 + k].parse::<f64>().unwrap(), e.products[k]);
        }
        assert_eq!(fields[prob_col].parse::<f64>().unwrap(), e.prediction);
        assert_eq!(io::fmt_f64(e.prediction).parse::<f64>().unwrap(), e.prediction);
    }
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let ds = synth::gen_toy(300, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let run = || {
        let r = train::train(ds.relative.values(), &ds.labels, &cfg).unwrap();
        io::format_model(&r.params)
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(single, many);
}
