//! SCAD penalty, the functional SCAD and its local quadratic approximation.

use nalgebra::DMatrix;

use crate::bspline::SplineFunction;
use crate::error::{invalid, Result};
use crate::quadrature::trapezoid_uniform;

pub const DEFAULT_A: f64 = 3.7;

/// Tuning constants of the SCAD penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScadParams {
    lambda: f64,
    a: f64,
}

impl ScadParams {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda must be a finite non-negative number, got {lambda}"));
        }
        if !(a > 2.0 && a.is_finite()) {
            return invalid(format!("SCAD constant a must exceed 2, got {a}"));
        }
        Ok(Self { lambda, a })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_A)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `p_λ(u)` for `u ≥ 0`. Callers pass magnitudes.
    pub fn penalty(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0);
        let (l, a) = (self.lambda, self.a);
        if u <= l {
            l * u
        } else if u < a * l {
            -(u * u - 2.0 * a * l * u + l * l) / (2.0 * (a - 1.0))
        } else {
            (a + 1.0) * l * l / 2.0
        }
    }

    /// `p'_λ(u)` for `u ≥ 0`.
    pub fn derivative(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0);
        let (l, a) = (self.lambda, self.a);
        if u <= l {
            l
        } else if u < a * l {
            (a * l - u) / (a - 1.0)
        } else {
            0.0
        }
    }
}

pub fn scad(u: f64, params: &ScadParams) -> Result<f64> {
    if !(u >= 0.0) {
        return invalid(format!("SCAD argument must be non-negative, got {u}"));
    }
    Ok(params.penalty(u))
}

pub fn scad_deriv(u: f64, params: &ScadParams) -> Result<f64> {
    if !(u >= 0.0) {
        return invalid(format!("SCAD argument must be non-negative, got {u}"));
    }
    Ok(params.derivative(u))
}

pub const DEFAULT_FSCAD_POINTS: usize = 100_000;

/// `(1/T) ∫ p_λ(|β(t)|) dt` by the composite trapezoid rule on a uniform grid.
pub fn fscad_value(beta: &SplineFunction, params: &ScadParams, grid_points: usize) -> Result<f64> {
    if grid_points < 100 {
        return invalid("fSCAD quadrature needs at least 100 grid points");
    }
    let basis = beta.basis();
    let (a, b) = (basis.domain_start(), basis.domain_end());
    let integral = trapezoid_uniform(a, b, grid_points, |t| params.penalty(beta.value(t).abs()));
    Ok(integral / basis.domain_length())
}

/// Normalized subinterval magnitudes `c_j = √(M/T) ∥β_[j]∥₂`.
pub fn subinterval_magnitudes(beta: &SplineFunction) -> Vec<f64> {
    let basis = beta.basis();
    let scale = basis.num_subintervals() as f64 / basis.domain_length();
    (0..basis.num_subintervals())
        .map(|j| (scale * beta.subinterval_sq_norm(j)).sqrt())
        .collect()
}

/// `Σ_j p_λ(c_j)`, the subinterval form of `(M/T) ∫ p_λ(|β|)`.
pub fn fscad_approx(beta: &SplineFunction, params: &ScadParams) -> f64 {
    subinterval_magnitudes(beta)
        .into_iter()
        .map(|c| params.penalty(c))
        .sum()
}

/// LQA weights on each subinterval Gram block: `½ p'_λ(c_j) M / (T c_j)`.
///
/// Subintervals with `c_j ≤ threshold` are dead: they get weight zero and are
/// reported back so the solver can pin their coefficients.
pub fn lqa_weights(magnitudes: &[f64], params: &ScadParams, threshold: f64, scale: f64) -> (Vec<f64>, Vec<bool>) {
    let mut dead = vec![false; magnitudes.len()];
    let weights = magnitudes
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if c <= threshold {
                dead[j] = true;
                0.0
            } else {
                0.5 * params.derivative(c) * scale / c
            }
        })
        .collect();
    (weights, dead)
}

/// `W⁽⁰⁾ = ½ Σ_j p'_λ(c_j) / (c_j T / M) · W_j` over live subintervals, and
/// the sorted list of dead subinterval indices (1-based).
pub fn lqa_matrix(beta0: &SplineFunction, params: &ScadParams, shrink_threshold: f64) -> (DMatrix<f64>, Vec<usize>) {
    let basis = beta0.basis();
    let c = subinterval_magnitudes(beta0);
    let scale = basis.num_subintervals() as f64 / basis.domain_length();
    let (weights, dead) = lqa_weights(&c, params, shrink_threshold, scale);
    let blocks = basis
        .local_blocks(0, basis.degree() + 1)
        .expect("order 0 is always valid");
    let p = basis.size();
    let q = basis.degree() + 1;
    let mut w = DMatrix::zeros(p, p);
    for (j, (block, weight)) in blocks.iter().zip(&weights).enumerate() {
        if *weight == 0.0 {
            continue;
        }
        for u in 0..q {
            for v in 0..q {
                w[(j + u, j + v)] += weight * block[(u, v)];
            }
        }
    }
    let dead_idx = dead
        .iter()
        .enumerate()
        .filter_map(|(j, &d)| d.then_some(j + 1))
        .collect();
    (w, dead_idx)
}

/// Relative dead-subinterval rule: `c_j ≤ max(relative · max_j c_j, floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkRule {
    pub relative: f64,
    pub floor: f64,
}

impl Default for ShrinkRule {
    fn default() -> Self {
        Self {
            relative: 1e-4,
            floor: 1e-10,
        }
    }
}

impl ShrinkRule {
    pub fn threshold(&self, magnitudes: &[f64]) -> f64 {
        let max = magnitudes.iter().copied().fold(0.0, f64::max);
        (self.relative * max).max(self.floor)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            relative: self.relative * factor,
            floor: self.floor * factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::BSplineBasis;
    use proptest::prelude::*;

    fn p(l: f64) -> ScadParams {
        ScadParams::with_lambda(l).unwrap()
    }

    #[test]
    fn branch_values() {
        assert_eq!(scad(0.0, &p(1.0)).unwrap(), 0.0);
        assert!((scad(5.0, &p(1.0)).unwrap() - 2.35).abs() < 1e-14);
        assert!((scad(2.0, &p(1.0)).unwrap() - 9.8 / 5.4).abs() < 1e-14);
        assert!(scad(-0.1, &p(1.0)).is_err());
        assert!(scad_deriv(-0.1, &p(1.0)).is_err());
    }

    #[test]
    fn derivative_values() {
        assert_eq!(scad_deriv(3.7, &p(1.0)).unwrap(), 0.0);
        assert_eq!(scad_deriv(10.0, &p(1.0)).unwrap(), 0.0);
        assert_eq!(scad_deriv(0.5, &p(1.0)).unwrap(), 1.0);
        assert!((scad_deriv(2.0, &p(1.0)).unwrap() - 1.7 / 2.7).abs() < 1e-14);
        let h = 1e-6;
        let fd = (scad(2.0 + h, &p(1.0)).unwrap() - scad(2.0 - h, &p(1.0)).unwrap()) / (2.0 * h);
        assert!((fd - 1.7 / 2.7).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ScadParams::new(-1.0, 3.7).is_err());
        assert!(ScadParams::new(1.0, 2.0).is_err());
        assert!(ScadParams::new(f64::NAN, 3.7).is_err());
    }

    #[test]
    fn continuity_at_breakpoints() {
        let s = p(0.7);
        for u in [0.7, 0.7 * 3.7] {
            let lo = s.penalty(u - 1e-12);
            let hi = s.penalty(u + 1e-12);
            assert!((lo - hi).abs() < 1e-10);
        }
    }

    #[test]
    fn fscad_constant_and_zero() {
        let b = BSplineBasis::new(1.0, 10, 3).unwrap();
        let zero = SplineFunction::zero(b.clone());
        assert_eq!(fscad_value(&zero, &p(1.0), 1000).unwrap(), 0.0);
        assert_eq!(fscad_approx(&zero, &p(1.0)), 0.0);
        let c = SplineFunction::new(b.clone(), vec![4.0; b.size()]).unwrap();
        assert!((fscad_value(&c, &p(1.0), 1000).unwrap() - 2.35).abs() < 1e-12);
        assert!((fscad_approx(&c, &p(1.0)) - 10.0 * 2.35).abs() < 1e-10);
        assert!(fscad_value(&c, &p(1.0), 50).is_err());
    }

    /// Closed-form `∫_0^1 p_1(5t) dt` split at t = 0.2 and t = 0.74.
    fn linear_fscad_oracle() -> f64 {
        let (l, a) = (1.0f64, 3.7f64);
        let first = 5.0 * 0.2f64.powi(2) / 2.0;
        // ∫ -(25t² − 2aλ·5t + λ²) / (2(a−1)) over (0.2, 0.74)
        let anti = |t: f64| -(25.0 * t.powi(3) / 3.0 - a * l * 5.0 * t * t + l * l * t) / (2.0 * (a - 1.0));
        let middle = anti(0.74) - anti(0.2);
        let last = (a + 1.0) * l * l / 2.0 * (1.0 - 0.74);
        first + middle + last
    }

    #[test]
    fn fscad_linear_matches_closed_form() {
        let want = linear_fscad_oracle();
        assert!((want - 1.737).abs() < 1e-12, "{want}");
        let b = BSplineBasis::new(1.0, 10, 3).unwrap();
        let beta = SplineFunction::new(b.clone(), b.greville().iter().map(|g| 5.0 * g).collect()).unwrap();
        let got = fscad_value(&beta, &p(1.0), 1_000_000).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");

        let fine = BSplineBasis::new(1.0, 500, 3).unwrap();
        let beta = SplineFunction::new(fine.clone(), fine.greville().iter().map(|g| 5.0 * g).collect()).unwrap();
        let approx = fscad_approx(&beta, &p(1.0)) / 500.0;
        assert!((approx - want).abs() / want < 0.01);
    }

    #[test]
    fn lqa_zero_lambda_and_saturated() {
        let b = BSplineBasis::new(1.0, 8, 3).unwrap();
        let beta = SplineFunction::project(b.clone(), |t| 2.0 + t);
        let (w, dead) = lqa_matrix(&beta, &p(0.0), 1e-10);
        assert!(w.iter().all(|&x| x == 0.0));
        assert!(dead.is_empty());
        // c_j ≥ 2 ≥ aλ for λ = 0.5
        let (w, _) = lqa_matrix(&beta, &p(0.5), 1e-10);
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lqa_first_branch_weight() {
        let b = BSplineBasis::new(2.0, 8, 3).unwrap();
        let beta = SplineFunction::project(b.clone(), |t| 0.05 * (1.0 + t * t));
        let lam = 1.0;
        let (w, dead) = lqa_matrix(&beta, &p(lam), 1e-12);
        assert!(dead.is_empty());
        let coef = nalgebra::DVector::from_column_slice(beta.coefficients());
        let got = (coef.transpose() * &w * &coef)[(0, 0)];
        // ½ Σ λ / c_j · (M/T) ∫_j β², with ∫_j β² by dense trapezoid.
        let (m, t) = (8.0, 2.0);
        let mut want = 0.0;
        for j in 0..8 {
            let (lo, hi) = b.subinterval(j);
            let sq = trapezoid_uniform(lo, hi, 20001, |x| beta.value(x).powi(2));
            let c = (m / t * sq).sqrt();
            want += 0.5 * lam / c * (m / t) * sq;
        }
        assert!((got - want).abs() / want < 1e-7, "{got} vs {want}");
    }

    #[test]
    fn lqa_marks_dead_subintervals() {
        let b = BSplineBasis::new(1.0, 6, 2).unwrap();
        let mut coef = vec![0.0; b.size()];
        coef[7] = 1.0;
        let beta = SplineFunction::new(b, coef).unwrap();
        let (w, dead) = lqa_matrix(&beta, &p(10.0), 1e-8);
        assert_eq!(dead, vec![1, 2, 3, 4, 5]);
        assert!(w[(7, 7)] > 0.0);
        assert_eq!(w[(0, 0)], 0.0);
    }

    #[test]
    fn shrink_rule_threshold() {
        let r = ShrinkRule::default();
        assert_eq!(r.threshold(&[0.0, 0.0]), 1e-10);
        assert!((r.threshold(&[1.0, 3.0]) - 3e-4).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn nondecreasing_and_fd_derivative(u in 0.0f64..10.0, lam in 0.05f64..2.0) {
            let s = p(lam);
            prop_assert!(s.penalty(u + 1e-3) >= s.penalty(u));
            let h = 1e-7;
            let away = (u - lam).abs() > 1e-4 && (u - 3.7 * lam).abs() > 1e-4 && u > h;
            if away {
                let fd = (s.penalty(u + h) - s.penalty(u - h)) / (2.0 * h);
                prop_assert!((fd - s.derivative(u)).abs() < 1e-6);
            }
            if u >= 3.7 * lam {
                prop_assert_eq!(s.derivative(u), 0.0);
                prop_assert!((s.penalty(u) - 4.7 * lam * lam / 2.0).abs() < 1e-12);
            }
        }

        #[test]
        fn lqa_tangency(u0 in 1e-3f64..6.0, lam in 0.1f64..2.0) {
            let s = p(lam);
            let quad = |u: f64| s.penalty(u0) + s.derivative(u0) * (u * u - u0 * u0) / (2.0 * u0);
            prop_assert!((quad(u0) - s.penalty(u0)).abs() < 1e-14);
            let h = 1e-7;
            let dq = (quad(u0 + h) - quad(u0 - h)) / (2.0 * h);
            if (u0 - lam).abs() > 1e-4 && (u0 - 3.7 * lam).abs() > 1e-4 {
                prop_assert!((dq - s.derivative(u0)).abs() < 1e-6);
            }
        }
    }
}
