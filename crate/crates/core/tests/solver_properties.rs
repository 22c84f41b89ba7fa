mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slos::quadrature::trapezoid_weights;
use slos::solver::predict_multi;
use slos::{fit, fit_multi, BSplineBasis, FitConfig, FunctionalData, Predictor, SlosError, SplineFunction};

use common::{bump, random_data};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn sample_order_does_not_matter() {
    let data = random_data(120, 31, 0.05, bump);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let shuffled = data.select(&order);
    for lambda in [0.0, 0.05] {
        let config = FitConfig::new(15).with_gamma(1e-6).with_lambda(lambda).unwrap();
        let a = fit(&data, &config).unwrap();
        let b = fit(&shuffled, &config).unwrap();
        assert_eq!(a.active_mask, b.active_mask);
        assert!(max_abs_diff(a.beta_hat.coefficients(), b.beta_hat.coefficients()) < 1e-12);
        assert!((a.mu_hat - b.mu_hat).abs() < 1e-12);
    }
}

#[test]
fn single_regressor_joint_fit_matches_fit() {
    let data = random_data(100, 32, 0.05, bump);
    let config = FitConfig::new(12).with_gamma(1e-6).with_lambda(0.05).unwrap();
    let single = fit(&data, &config).unwrap();
    let joint = fit_multi(std::slice::from_ref(&data.curves), &data.responses, &[config]).unwrap();
    let b = &joint.fits[0];
    assert!(max_abs_diff(single.beta_hat.coefficients(), b.beta_hat.coefficients()) < 1e-12);
    assert!((single.mu_hat - joint.mu_hat).abs() < 1e-12);
    assert_eq!(single.active_mask, b.active_mask);
}

#[test]
fn irrelevant_second_regressor_is_zeroed() {
    let data = random_data(200, 33, 0.05, bump);
    let other = random_data(200, 34, 0.0, |_| 0.0).curves;
    let first = FitConfig::new(12).with_gamma(1e-6).with_lambda(0.05).unwrap();
    let second = FitConfig::new(12).with_gamma(1e-6).with_lambda(10.0).unwrap();
    let joint = fit_multi(
        &[data.curves.clone(), other.clone()],
        &data.responses,
        &[first.clone(), second],
    )
    .unwrap();
    let zeroed = &joint.fits[1];
    assert!(zeroed.active_mask.iter().all(|a| !a));
    assert!(zeroed.beta_hat.coefficients().iter().all(|&c| c == 0.0));

    let alone = fit(&data, &first).unwrap();
    let b1 = joint.fits[0].beta_hat.coefficients();
    let scale = alone.beta_hat.coefficients().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    assert!(max_abs_diff(alone.beta_hat.coefficients(), b1) < 1e-4 * scale);

    let yhat = predict_multi(&joint, &[data.curves.clone(), other]).unwrap();
    let single = alone.predict(&data.curves).unwrap();
    assert!((yhat - single).amax() < 1e-3);
}

#[test]
fn joint_fit_validates_inputs() {
    let data = random_data(50, 35, 0.05, bump);
    let config = FitConfig::new(8);
    assert!(fit_multi(&[], &data.responses, &[]).is_err());
    assert!(fit_multi(
        std::slice::from_ref(&data.curves),
        &data.responses,
        &[config.clone(), config]
    )
    .is_err());
}

#[test]
fn noiseless_spline_truth_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let config = FitConfig::new(8);
    let basis = config.basis((0.0, 1.0)).unwrap();
    let c = (0..basis.size()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let truth = SplineFunction::new(basis, c).unwrap();
    let x = random_data(60, 37, 0.0, |_| 0.0).curves;
    let w = trapezoid_weights(x.grid());
    let y = DVector::from_fn(x.len(), |i, _| {
        0.5 + x
            .grid()
            .iter()
            .enumerate()
            .map(|(k, &t)| w[k] * x.values()[(i, k)] * truth.value(t))
            .sum::<f64>()
    });
    let data = FunctionalData::new(x, y.clone()).unwrap();
    let f = fit(&data, &config).unwrap();
    assert!((f.predict(&data.curves).unwrap() - y).amax() < 1e-8);
    assert!((f.mu_hat - 0.5).abs() < 1e-8);
}

#[test]
fn df_limits() {
    let data = random_data(80, 38, 0.1, bump);
    let ols = fit(&data, &FitConfig::new(10)).unwrap();
    assert!((ols.df - 14.0).abs() < 1e-9, "df {}", ols.df);
    let linear = fit(&data, &FitConfig::new(10).with_gamma(1e8)).unwrap();
    assert!((linear.df - 3.0).abs() < 1e-3, "df {}", linear.df);
    let mut no_intercept = FitConfig::new(10).with_gamma(1e8);
    no_intercept.fit_intercept = false;
    assert!((fit(&data, &no_intercept).unwrap().df - 2.0).abs() < 1e-3);
}

#[test]
fn too_few_samples_for_least_squares() {
    let data = random_data(10, 39, 0.1, bump);
    match fit(&data, &FitConfig::new(10)) {
        Err(SlosError::IllConditioned { iteration: 0, .. }) => {}
        other => panic!("expected an ill-conditioned error, got {other:?}"),
    }
    assert!(fit(&data, &FitConfig::new(10).with_gamma(1e-4)).is_ok());
}

proptest! {
    #[test]
    fn basis_sums_to_one(m in 1usize..40, d in 0usize..6, u in 0.0f64..=1.0, start in -5.0f64..5.0, len in 0.1f64..50.0) {
        let basis = BSplineBasis::on_interval(start, start + len, m, d).unwrap();
        let t = (start + u * len).min(start + len);
        let sum: f64 = basis.eval(t, 0).unwrap().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn first_derivative_matches_differences(m in 2usize..30, d in 1usize..6, u in 0.0f64..1.0) {
        let basis = BSplineBasis::new(1.0, m, d).unwrap();
        let h = 1e-6;
        let t = u.clamp(2.0 * h, 1.0 - 2.0 * h);
        let knot_gap = basis.knots().iter().map(|k| (k - t).abs()).fold(f64::INFINITY, f64::min);
        prop_assume!(knot_gap >= h);
        let up = basis.eval(t + h, 0).unwrap();
        let down = basis.eval(t - h, 0).unwrap();
        let deriv = basis.eval(t, 1).unwrap();
        for k in 0..basis.size() {
            prop_assert!(((up[k] - down[k]) / (2.0 * h) - deriv[k]).abs() < 1e-5);
        }
    }
}
