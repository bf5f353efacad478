mod common;

use mff_ftnet::dataio::{gen_synthetic, load_csv, split, standardize, SplitRule, SyntheticSpec};
use mff_ftnet::evaluation::{
    encode_positions, evaluate_horizons, extract_features, fit_ridge, horizon_targets, ridge_solve, score, Features,
    ForecastReport, Mode, ALPHA_GRID,
};
use mff_ftnet::model::Model;
use mff_ftnet::Tensor;

/// Dense ridge with an unpenalized intercept by Gauss-Jordan elimination on
/// the augmented normal equations.
fn ridge_oracle(x: &Tensor, y: &Tensor, alpha: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (m, k) = x.dims2().unwrap();
    let (_, q) = y.dims2().unwrap();
    let n = k + 1;
    let row = |i: usize| -> Vec<f64> { (0..k).map(|j| x.at2(i, j)).chain([1.0]).collect() };
    let mut a = vec![vec![0.0; n + q]; n];
    for i in 0..m {
        let r = row(i);
        for u in 0..n {
            for v in 0..n {
                a[u][v] += r[u] * r[v];
            }
            for c in 0..q {
                a[u][n + c] += r[u] * y.at2(i, c);
            }
        }
    }
    for (u, au) in a.iter_mut().enumerate().take(k) {
        au[u] += alpha;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &r| a[p][col].abs().total_cmp(&a[r][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                let src = a[col].clone();
                a[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    let weights = (0..k).map(|u| a[u][n..].to_vec()).collect();
    (weights, a[k][n..].to_vec())
}

#[test]
fn ridge_matches_normal_equations() {
    let x = Tensor::from_fn(vec![30, 4], |i| ((i * 37 % 23) as f64 / 7.0).sin());
    let y = Tensor::from_fn(vec![30, 2], |i| ((i * 11 % 13) as f64 / 5.0).cos());
    for alpha in ALPHA_GRID {
        let probe = ridge_solve(&x, &y, alpha).unwrap();
        let (w, b) = ridge_oracle(&x, &y, alpha);
        for u in 0..4 {
            for c in 0..2 {
                assert!((probe.weights.at2(u, c) - w[u][c]).abs() < 1e-9, "alpha {alpha}");
            }
        }
        for c in 0..2 {
            assert!((probe.intercept[c] - b[c]).abs() < 1e-9);
        }
    }
    assert!(ridge_solve(&x, &y, 0.0).is_err());
}

#[test]
fn noiseless_linear_targets_are_recovered() {
    let x = Tensor::from_fn(vec![50, 3], |i| ((i * 13 % 17) as f64 - 8.0) / 4.0 + (i as f64).sin());
    let y = Tensor::from_fn(vec![50, 1], |i| 2.0 * x.at2(i, 0) - 0.5 * x.at2(i, 1) + 0.25 * x.at2(i, 2) + 3.0);
    let probe = ridge_solve(&x, &y, 1e-10).unwrap();
    let pred = probe.predict(&x).unwrap();
    assert!(pred.max_abs_diff(&y) < 1e-6);
}

#[test]
fn alpha_selection_never_reads_test_targets() {
    let mk = |n: usize, off: usize| {
        let x = Tensor::from_fn(vec![n, 2], |i| ((i + off) as f64 * 0.7).sin());
        let y = Tensor::from_fn(vec![n, 1], |i| ((i / 2 + off) as f64 * 0.7).sin() * 0.8);
        Features::new(x, y).unwrap()
    };
    let (train, valid, test) = (mk(40, 0), mk(20, 40), mk(20, 60));
    let probe = fit_ridge(&train, &valid, &ALPHA_GRID).unwrap();
    assert!(ALPHA_GRID.contains(&probe.alpha));
    assert_eq!(test.target_reads(), 0);
    assert!(valid.target_reads() > 0);
    score(&probe, &test).unwrap();
    assert_eq!(test.target_reads(), 1);
}

#[test]
fn targets_are_step_major() {
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    let y = horizon_targets(&t, 0..20, 5, 3, Mode::Multivariate).unwrap();
    assert_eq!(y.shape(), &[13, 21]);
    // row 2, second future step, feature 4
    assert_eq!(y.at2(2, 7 + 4), t.get(2 + 5 + 1, 4));
    let u = horizon_targets(&t, 0..20, 5, 3, Mode::Univariate).unwrap();
    assert_eq!(u.shape(), &[13, 3]);
    assert_eq!(u.at2(4, 2), t.get(4 + 5 + 2, 6));
}

#[test]
fn features_use_the_last_timestep() {
    let mut cfg = common::toy_config();
    cfg.backbone.input_dim = 7;
    let model = Model::new(&cfg, 2).unwrap();
    let t = load_csv(common::fixture("ETTh1_mini.csv")).unwrap();
    let s = split(&t, &SplitRule::Auto).unwrap();
    let z = standardize(&t, &s).unwrap();
    let enc = encode_positions(&model, &z, 0..30, 16, 4, Mode::Multivariate).unwrap();
    assert_eq!(enc.shape(), &[11, 8]);
    let full = model.encode(&z.rows(3..19)).unwrap();
    assert_eq!(enc.rows(3, 4).unwrap().data(), &full.data()[15 * 8..]);
    let f = extract_features(&model, &z, 0..30, 16, 4, Mode::Multivariate).unwrap();
    assert_eq!(f.len(), 11);
}

#[test]
fn horizons_that_do_not_fit_become_warnings() {
    let model = Model::new(&common::toy_config(), 2).unwrap();
    let t = gen_synthetic(&SyntheticSpec::two_sinusoids(200, 2, 1)).unwrap();
    let s = split(&t, &SplitRule::Auto).unwrap();
    let z = standardize(&t, &s).unwrap();
    let report = evaluate_horizons(&model, &z, &s, 16, &[1, 2, 500], Mode::Multivariate, &ALPHA_GRID).unwrap();
    assert_eq!(report.entries.iter().map(|e| e.horizon).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.warnings[0].contains("500"));
    let avg = (report.entries[0].mse + report.entries[1].mse) / 2.0;
    assert!((report.average_mse.unwrap() - avg).abs() < 1e-15);
    assert!(report.standardized);

    let text = report.to_json();
    assert!(!text.contains("timestamp"));
    assert_eq!(ForecastReport::from_json(&text).unwrap(), report);
}

#[test]
fn univariate_probe_sees_only_the_target() {
    let mut one = common::toy_config();
    one.backbone.input_dim = 1;
    let model = Model::new(&one, 2).unwrap();
    let t = gen_synthetic(&SyntheticSpec::two_sinusoids(200, 3, 1)).unwrap();
    let s = split(&t, &SplitRule::Auto).unwrap();
    let z = standardize(&t, &s).unwrap();
    let report = evaluate_horizons(&model, &z, &s, 16, &[2], Mode::Univariate, &ALPHA_GRID).unwrap();
    assert_eq!(report.mode, Mode::Univariate);
    assert_eq!(report.entries.len(), 1);
    assert!(report.entries[0].mse.is_finite());
}
