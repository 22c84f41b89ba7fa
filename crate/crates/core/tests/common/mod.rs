#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slos::quadrature::trapezoid_weights;
use slos::{BSplineBasis, Curves, FunctionalData};

/// Curves drawn as random quartic splines on 101 points of `[0, 1]`, with
/// `y = 1 + ∫ X β + noise·ε`.
pub fn random_data(n: usize, seed: u64, noise: f64, beta: impl Fn(f64) -> f64) -> FunctionalData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
    let gen = BSplineBasis::new(1.0, 20, 4).unwrap();
    let coll = gen.collocation(&grid);
    let a = DMatrix::from_fn(n, gen.size(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = a * coll.transpose();
    let w = trapezoid_weights(&grid);
    let y = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..grid.len()).map(|k| w[k] * x[(i, k)] * beta(grid[k])).sum();
        1.0 + s + noise * rng.sample::<f64, _>(StandardNormal)
    });
    FunctionalData::new(Curves::on_grid(grid, x).unwrap(), y).unwrap()
}

pub fn bump(t: f64) -> f64 {
    if (0.3..=0.7).contains(&t) {
        0.0
    } else {
        2.0 * (2.0 * std::f64::consts::PI * t).sin()
    }
}

/// Design `[1 | U]` and roughness penalty padded for the intercept, built
/// straight from the basis.
pub fn augmented_system(data: &FunctionalData, basis: &BSplineBasis, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = basis.design_matrix(data.curves.values(), data.curves.grid()).unwrap();
    let n = data.len();
    let p = basis.size();
    let mut ua = DMatrix::from_element(n, p + 1, 1.0);
    ua.columns_mut(1, p).copy_from(&u);
    let mut v = DMatrix::zeros(p + 1, p + 1);
    v.view_mut((1, 1), (p, p)).copy_from(&basis.penalty_matrix(m).unwrap());
    (ua, v)
}

pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
