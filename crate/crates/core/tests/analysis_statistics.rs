use enkbf::analysis::{bias_term, biased_frequentist_mean, biased_mean_closed_form, subsample_diagnostic, MAccumulator, MEstimate};
use enkbf::harness::DEFAULT_SEED;
use enkbf::linalg::MatrixNorm;
use enkbf::models::{rotation_m, stationary_covariance, LinearModel, TwoScaleModel};
use enkbf::paths::{simulate_reference, simulate_two_scale, ObservationPath};
use enkbf::rng::derive_seed;
use nalgebra::DMatrix;
use rayon::prelude::*;

fn reference_paths(n: u64) -> Vec<ObservationPath> {
    let model = LinearModel::preset();
    (0..n)
        .into_par_iter()
        .map(|i| simulate_reference(&model, 6.0, 1e-4, derive_seed(DEFAULT_SEED, i)).unwrap())
        .collect()
}

fn two_scale_paths(n: u64, beta: f64) -> Vec<ObservationPath> {
    let model = TwoScaleModel::preset(0.01, beta).unwrap();
    (0..n)
        .into_par_iter()
        .map(|i| simulate_two_scale(&model, 6.0, 1e-4, derive_seed(DEFAULT_SEED, i), None).unwrap().x_path)
        .collect()
}

fn pooled_m(paths: &[ObservationPath], dt: f64) -> MEstimate {
    let mut acc = MAccumulator::new(2, dt, 1.0).unwrap();
    for p in paths {
        acc.add_path(p).unwrap();
    }
    acc.finish().unwrap()
}

/// Leading-order mean of consecutive increments of the stationary reference
/// process, `−Δt² C (Aᵀ)²`.
fn reference_increment_product(dt: f64) -> DMatrix<f64> {
    let model = LinearModel::preset();
    let c = stationary_covariance(&model).unwrap();
    let at = model.drift().transpose();
    -(c * &at * &at) * (dt * dt)
}

#[test]
fn m_estimate_on_reference_data_vanishes_up_to_first_order() {
    let dt = 0.06;
    let est = pooled_m(&reference_paths(200), dt);
    let predicted = reference_increment_product(dt) * (2.0 / dt);
    for i in 0..2 {
        for j in 0..2 {
            let err = (est.matrix[(i, j)] - predicted[(i, j)]).abs();
            assert!(err <= 3.0 * est.stderr[(i, j)], "({i},{j}): {} vs {}", est.matrix[(i, j)], predicted[(i, j)]);
            assert!(est.matrix[(i, j)].abs() <= 3.0 * est.stderr[(i, j)] + 2.0 * dt);
        }
    }
}

#[test]
fn m_estimate_follows_the_sign_of_the_skew_part() {
    for beta in [2.0, -2.0] {
        let est = pooled_m(&two_scale_paths(50, beta), 0.06);
        let target = rotation_m(beta);
        assert!(est.matrix[(0, 1)].signum() == target[(0, 1)].signum());
        assert!(est.matrix[(1, 0)].signum() == target[(1, 0)].signum());
        assert!((est.matrix[(0, 0)] - 1.0).abs() < 0.2 && (est.matrix[(1, 1)] - 1.0).abs() < 0.2);
    }
}

#[test]
fn m_standard_error_shrinks_with_the_root_of_the_path_count() {
    let paths = two_scale_paths(200, 2.0);
    let (small, large) = (pooled_m(&paths[..50], 0.06), pooled_m(&paths, 0.06));
    for i in 0..2 {
        for j in 0..2 {
            let ratio = small.stderr[(i, j)] / large.stderr[(i, j)];
            assert!((ratio - 2.0).abs() < 0.5, "({i},{j}) ratio {ratio}");
        }
    }
    assert_eq!(large.n_paths, 200);
}

#[test]
fn diagnostic_stays_bounded_on_reference_data() {
    let paths = reference_paths(200);
    let refs: Vec<&ObservationPath> = paths.iter().collect();
    let dts = [0.002, 0.01, 0.02, 0.06, 0.1, 0.2];
    let diag = subsample_diagnostic(&refs, &dts, MatrixNorm::Spectral).unwrap();
    let level = MatrixNorm::Spectral.apply(&reference_increment_product(1.0));
    for ((dt, h), se) in dts.iter().zip(&diag.h).zip(&diag.stderr) {
        assert!(*h <= level + 4.0 * se, "h({dt}) = {h}");
    }
}

#[test]
fn diagnostic_blows_up_below_the_fast_scale() {
    let paths = two_scale_paths(200, 2.0);
    let refs: Vec<&ObservationPath> = paths.iter().collect();
    let diag = subsample_diagnostic(&refs, &[0.002, 0.02, 0.06], MatrixNorm::Spectral).unwrap();
    assert!(diag.h[0] > 5.0 * diag.h[2], "{:?}", diag.h);
    assert!(diag.h[0] > diag.h[1] && diag.h[1] > diag.h[2]);
    let frob = subsample_diagnostic(&refs, &[0.002, 0.02, 0.06], MatrixNorm::Frobenius).unwrap();
    assert!(frob.h.iter().zip(&diag.h).all(|(f, s)| f >= s));
}

#[test]
fn preset_bias_drives_the_uncorrected_mean_negative() {
    let model = LinearModel::preset();
    let b = bias_term(model.drift(), &rotation_m(2.0), model.gamma()).unwrap();
    assert!((b + 1.5).abs() < 1e-12);
    let (times, m) = biased_frequentist_mean(4.0, 0.0, 1.0, b, 6.0, 0.06).unwrap();
    for (t, v) in times.iter().zip(&m) {
        assert!((v - biased_mean_closed_form(4.0, 0.0, 1.0, b, *t)).abs() < 1e-6);
    }
    assert!((m.last().unwrap() + 0.48).abs() < 1e-6);
}
