//! Clamped B-spline bases on equally spaced knots.
//!
//! A basis of degree `d` on `M` equal subintervals of `[start, end]` has
//! `M + d` functions. Boundary knots are repeated `d + 1` times so the basis
//! interpolates at both ends. Subinterval `j` (0-based) carries the `d + 1`
//! nonzero functions `j..=j + d`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::quadrature::{trapezoid_weights, GaussLegendre};

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    domain_start: f64,
    domain_end: f64,
    num_subintervals: usize,
    degree: usize,
    /// Breakpoints `t_0 < ... < t_M`.
    knots: Vec<f64>,
    /// Full clamped knot vector of length `M + 1 + 2d`.
    extended: Vec<f64>,
}

impl BSplineBasis {
    /// Basis on `[0, T]`.
    pub fn new(domain_length: f64, num_subintervals: usize, degree: usize) -> Result<Self> {
        Self::on_interval(0.0, domain_length, num_subintervals, degree)
    }

    pub fn on_interval(start: f64, end: f64, num_subintervals: usize, degree: usize) -> Result<Self> {
        if num_subintervals == 0 {
            return invalid("number of subintervals must be at least 1");
        }
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return invalid(format!("domain [{start}, {end}] must have positive length"));
        }
        let m = num_subintervals;
        let len = end - start;
        let knots: Vec<f64> = (0..=m)
            .map(|i| if i == m { end } else { start + len * i as f64 / m as f64 })
            .collect();
        let mut extended = Vec::with_capacity(m + 1 + 2 * degree);
        extended.extend(std::iter::repeat_n(start, degree));
        extended.extend_from_slice(&knots);
        extended.extend(std::iter::repeat_n(end, degree));
        Ok(Self {
            domain_start: start,
            domain_end: end,
            num_subintervals: m,
            degree,
            knots,
            extended,
        })
    }

    pub fn domain_start(&self) -> f64 {
        self.domain_start
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_end - self.domain_start
    }

    pub fn num_subintervals(&self) -> usize {
        self.num_subintervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn size(&self) -> usize {
        self.num_subintervals + self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn spacing(&self) -> f64 {
        self.domain_length() / self.num_subintervals as f64
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.domain_start && t <= self.domain_end
    }

    /// Endpoints of subinterval `j` (0-based).
    pub fn subinterval(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + 1])
    }

    /// Subinterval containing `t`; the right endpoint belongs to the last one.
    pub fn span_of(&self, t: f64) -> usize {
        let m = self.num_subintervals;
        let raw = ((t - self.domain_start) / self.spacing()).floor();
        let mut j = if raw <= 0.0 { 0 } else { (raw as usize).min(m - 1) };
        while j > 0 && t < self.knots[j] {
            j -= 1;
        }
        while j + 1 < m && t >= self.knots[j + 1] {
            j += 1;
        }
        j
    }

    /// Range of subintervals on which basis function `k` can be nonzero.
    pub fn support(&self, k: usize) -> std::ops::RangeInclusive<usize> {
        let lo = k.saturating_sub(self.degree);
        let hi = k.min(self.num_subintervals - 1);
        lo..=hi
    }

    /// Greville abscissae; a linear function `f` has coefficients `f(greville)`.
    pub fn greville(&self) -> Vec<f64> {
        let d = self.degree;
        (0..self.size())
            .map(|k| {
                if d == 0 {
                    let (a, b) = self.subinterval(k);
                    0.5 * (a + b)
                } else {
                    self.extended[k + 1..=k + d].iter().sum::<f64>() / d as f64
                }
            })
            .collect()
    }

    /// Derivatives `0..=max_deriv` of the `d + 1` functions nonzero on
    /// subinterval `span`, evaluated at `t`. Row `r` holds the `r`-th
    /// derivative of functions `span..=span + d`.
    pub(crate) fn local_derivatives(&self, span: usize, t: f64, max_deriv: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.extended;
        // Index of knot t_span in the extended vector.
        let i = span + p;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let nd = max_deriv.min(p);
        let mut ders = vec![vec![0.0; p + 1]; max_deriv + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1).take(nd) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// All `M + d` basis values (or `deriv_order`-th derivatives) at `t`.
    pub fn eval(&self, t: f64, deriv_order: usize) -> Result<Vec<f64>> {
        if !self.contains(t) {
            return invalid(format!("t = {t} outside [{}, {}]", self.domain_start, self.domain_end));
        }
        if deriv_order > self.degree {
            return invalid(format!("derivative order {deriv_order} exceeds degree {}", self.degree));
        }
        let span = self.span_of(t);
        let local = self.local_derivatives(span, t, deriv_order);
        let mut out = vec![0.0; self.size()];
        out[span..=span + self.degree].copy_from_slice(&local[deriv_order]);
        Ok(out)
    }

    /// Local `(d+1) x (d+1)` blocks `∫ D^m B_u D^m B_v` over each subinterval,
    /// using a Gauss–Legendre rule with `order` nodes.
    pub fn local_blocks(&self, deriv_order: usize, order: usize) -> Result<Vec<DMatrix<f64>>> {
        if deriv_order > self.degree {
            return invalid(format!("penalty order {deriv_order} exceeds degree {}", self.degree));
        }
        let q = self.degree + 1;
        let rule = GaussLegendre::new(order.max(1));
        Ok((0..self.num_subintervals)
            .map(|j| {
                let (a, b) = self.subinterval(j);
                let mut block = DMatrix::zeros(q, q);
                for (x, w) in rule.on_interval(a, b) {
                    let vals = &self.local_derivatives(j, x, deriv_order)[deriv_order];
                    for u in 0..q {
                        for v in 0..q {
                            block[(u, v)] += w * vals[u] * vals[v];
                        }
                    }
                }
                block
            })
            .collect())
    }

    fn assemble(&self, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let p = self.size();
        let q = self.degree + 1;
        let mut out = DMatrix::zeros(p, p);
        for (j, block) in blocks.iter().enumerate() {
            for u in 0..q {
                for v in 0..q {
                    out[(j + u, j + v)] += block[(u, v)];
                }
            }
        }
        out
    }

    /// Roughness penalty matrix `v_ij = ∫ D^m B_i D^m B_j`.
    pub fn penalty_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        self.penalty_matrix_with_order(m, self.degree + 1)
    }

    pub fn penalty_matrix_with_order(&self, m: usize, order: usize) -> Result<DMatrix<f64>> {
        let blocks = self.local_blocks(m, order)?;
        Ok(self.assemble(&blocks))
    }

    /// Full Gram matrix `∫ B_u B_v` over the domain.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let blocks = self.local_blocks(0, self.degree + 1).expect("order 0 is always valid");
        self.assemble(&blocks)
    }

    /// `W_j`: the Gram matrix restricted to subinterval `j` (1-based, as `1..=M`).
    pub fn subinterval_gram(&self, j: usize) -> Result<DMatrix<f64>> {
        if j == 0 || j > self.num_subintervals {
            return invalid(format!("subinterval index {j} outside 1..={}", self.num_subintervals));
        }
        let idx = j - 1;
        let q = self.degree + 1;
        let rule = GaussLegendre::new(q);
        let (a, b) = self.subinterval(idx);
        let p = self.size();
        let mut out = DMatrix::zeros(p, p);
        for (x, w) in rule.on_interval(a, b) {
            let vals = &self.local_derivatives(idx, x, 0)[0];
            for u in 0..q {
                for v in 0..q {
                    out[(idx + u, idx + v)] += w * vals[u] * vals[v];
                }
            }
        }
        Ok(out)
    }

    /// Basis values at every grid point (rows) for every function (columns).
    /// Points outside the domain get an all-zero row.
    pub fn collocation(&self, grid: &[f64]) -> DMatrix<f64> {
        let q = self.degree + 1;
        let mut out = DMatrix::zeros(grid.len(), self.size());
        for (r, &t) in grid.iter().enumerate() {
            if !self.contains(t) {
                continue;
            }
            let span = self.span_of(t);
            let vals = &self.local_derivatives(span, t, 0)[0];
            for u in 0..q {
                out[(r, span + u)] = vals[u];
            }
        }
        out
    }

    /// Design matrix `u_ij ≈ ∫ X_i B_j` by trapezoid quadrature on `grid`.
    /// `curves` is `n x K`, one sampled curve per row.
    pub fn design_matrix(&self, curves: &DMatrix<f64>, grid: &[f64]) -> Result<DMatrix<f64>> {
        validate_grid(grid)?;
        if curves.ncols() != grid.len() {
            return invalid(format!(
                "curves have {} samples but grid has {} points",
                curves.ncols(),
                grid.len()
            ));
        }
        let tol = 1e-9 * self.domain_length();
        if grid[0] < self.domain_start - tol || grid[grid.len() - 1] > self.domain_end + tol {
            return invalid("grid extends beyond the basis domain");
        }
        Ok(weighted_curves(curves, grid) * self.collocation(grid))
    }
}

/// Curves scaled column-wise by trapezoid weights, so that
/// `weighted_curves(X, grid) * f(grid)` approximates `∫ X_i f`.
pub(crate) fn weighted_curves(curves: &DMatrix<f64>, grid: &[f64]) -> DMatrix<f64> {
    let w = trapezoid_weights(grid);
    let mut xw = curves.clone();
    for (k, wk) in w.iter().enumerate() {
        xw.column_mut(k).scale_mut(*wk);
    }
    xw
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return invalid("grid needs at least two points");
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return invalid("grid contains non-finite values");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("grid must be strictly increasing");
    }
    Ok(())
}

/// Coefficient vector over a basis: `β(t) = Bᵀ(t) b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    basis: BSplineBasis,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(basis: BSplineBasis, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.size() {
            return invalid(format!(
                "expected {} coefficients, got {}",
                basis.size(),
                coefficients.len()
            ));
        }
        Ok(Self { basis, coefficients })
    }

    pub fn zero(basis: BSplineBasis) -> Self {
        let p = basis.size();
        Self {
            basis,
            coefficients: vec![0.0; p],
        }
    }

    /// L2 projection of `f` onto the spline space.
    pub fn project<F: Fn(f64) -> f64>(basis: BSplineBasis, f: F) -> Self {
        let q = basis.degree() + 1;
        let rule = GaussLegendre::new(q + 8);
        let mut rhs = DVector::zeros(basis.size());
        for j in 0..basis.num_subintervals() {
            let (a, b) = basis.subinterval(j);
            for (x, w) in rule.on_interval(a, b) {
                let vals = &basis.local_derivatives(j, x, 0)[0];
                let fx = f(x);
                for u in 0..q {
                    rhs[j + u] += w * fx * vals[u];
                }
            }
        }
        let gram = basis.gram_matrix();
        let coef = gram
            .cholesky()
            .expect("B-spline Gram matrix is positive definite")
            .solve(&rhs);
        Self {
            basis,
            coefficients: coef.iter().copied().collect(),
        }
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    /// `β(t)`. Outside the domain the function is taken to be zero.
    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    pub fn derivative(&self, t: f64, order: usize) -> f64 {
        if !self.basis.contains(t) || order > self.basis.degree() {
            return 0.0;
        }
        let span = self.basis.span_of(t);
        let local = self.basis.local_derivatives(span, t, order);
        local[order]
            .iter()
            .zip(&self.coefficients[span..=span + self.basis.degree()])
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn values_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.value(t)).collect()
    }

    /// `∫ β²` over subinterval `j` (0-based), exactly.
    pub fn subinterval_sq_norm(&self, j: usize) -> f64 {
        let (a, b) = self.basis.subinterval(j);
        let rule = GaussLegendre::new(self.basis.degree() + 1);
        rule.integrate(a, b, |x| self.value_on_span(j, x).powi(2))
    }

    /// `∥β_[j]∥₂` for 1-based subinterval index `j`.
    pub fn l2_norm_on_subinterval(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.basis.num_subintervals() {
            return invalid(format!(
                "subinterval index {j} outside 1..={}",
                self.basis.num_subintervals()
            ));
        }
        Ok(self.subinterval_sq_norm(j - 1).sqrt())
    }

    /// `∫_a^b β²`, exact for any `[a, b]` inside the domain.
    pub fn sq_integral(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.basis.domain_start());
        let b = b.min(self.basis.domain_end());
        if b <= a {
            return 0.0;
        }
        let rule = GaussLegendre::new(self.basis.degree() + 1);
        let first = self.basis.span_of(a);
        let last = self.basis.span_of(b);
        (first..=last)
            .map(|j| {
                let (lo, hi) = self.basis.subinterval(j);
                let (lo, hi) = (lo.max(a), hi.min(b));
                if hi <= lo {
                    0.0
                } else {
                    rule.integrate(lo, hi, |x| self.value_on_span(j, x).powi(2))
                }
            })
            .sum()
    }

    fn value_on_span(&self, span: usize, t: f64) -> f64 {
        let local = self.basis.local_derivatives(span, t, 0);
        local[0]
            .iter()
            .zip(&self.coefficients[span..=span + self.basis.degree()])
            .map(|(b, c)| b * c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn basis(t: f64, m: usize, d: usize) -> BSplineBasis {
        BSplineBasis::new(t, m, d).unwrap()
    }

    #[test]
    fn sizes_and_spacing() {
        assert_eq!(basis(1.0, 20, 3).size(), 23);
        let b = basis(365.0, 50, 3);
        assert_eq!(b.size(), 53);
        assert!((b.spacing() - 7.3).abs() < 1e-12);
        let b0 = basis(1.0, 1, 0);
        assert_eq!(b0.size(), 1);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(b0.eval(t, 0).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(BSplineBasis::new(1.0, 0, 3).is_err());
        assert!(BSplineBasis::new(0.0, 5, 3).is_err());
        assert!(BSplineBasis::new(-1.0, 5, 3).is_err());
        let b = basis(1.0, 5, 3);
        assert!(b.eval(1.5, 0).is_err());
        assert!(b.eval(-0.1, 0).is_err());
        assert!(b.eval(0.5, 4).is_err());
        assert!(b.penalty_matrix(4).is_err());
        assert!(b.subinterval_gram(0).is_err());
        assert!(b.subinterval_gram(6).is_err());
    }

    #[test]
    fn clamped_endpoint_interpolation() {
        let b = basis(1.0, 10, 3);
        let v0 = b.eval(0.0, 0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert!(v0[1..].iter().all(|&x| x == 0.0));
        let v1 = b.eval(1.0, 0).unwrap();
        assert!((v1[12] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn figure_basis_support() {
        // One of 23 cubic functions on 21 knots is nonzero only on [0.1, 0.3]:
        // with 0-based index k, support is [t_{k-3}, t_{k+1}]; k = 5 gives [0.1, 0.3].
        let b = basis(1.0, 20, 3);
        let v = b.eval(0.2, 0).unwrap();
        assert!(v[5] > 0.0);
        for t in [0.05, 0.0999, 0.3001, 0.6] {
            assert_eq!(b.eval(t, 0).unwrap()[5], 0.0, "t={t}");
        }
        let nonzero: Vec<usize> = (0..23).filter(|&k| v[k] != 0.0).collect();
        assert!(nonzero.len() <= 4);
    }

    #[test]
    fn penalty_annihilates_linear() {
        let b = basis(1.0, 12, 3);
        let v = b.penalty_matrix(2).unwrap();
        let coef = DVector::from_vec(b.greville().iter().map(|g| 0.4 - 2.0 * g).collect());
        let q = (coef.transpose() * &v * &coef)[(0, 0)];
        assert!(q.abs() < 1e-9, "{q}");
        let line = SplineFunction::new(b.clone(), coef.iter().copied().collect()).unwrap();
        for t in [0.0, 0.13, 0.5, 0.99] {
            assert!((line.value(t) - (0.4 - 2.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_of_sine() {
        let b = basis(1.0, 50, 3);
        let f = SplineFunction::project(b.clone(), |t| (2.0 * PI * t).sin());
        let v = b.penalty_matrix(2).unwrap();
        let c = DVector::from_column_slice(f.coefficients());
        let q = (c.transpose() * &v * &c)[(0, 0)];
        let want = (2.0 * PI).powi(4) / 2.0;
        assert!((q - want).abs() / want < 0.005, "{q} vs {want}");
    }

    #[test]
    fn penalty_nullspace_dimension() {
        let b = basis(1.0, 8, 3);
        for m in 1..=3 {
            let v = b.penalty_matrix(m).unwrap();
            let eig = v.symmetric_eigenvalues();
            let max = eig.iter().cloned().fold(0.0, f64::max);
            let zeros = eig.iter().filter(|&&e| e.abs() < 1e-10 * max).count();
            assert_eq!(zeros, m, "m={m}");
            assert!(eig.iter().all(|&e| e > -1e-10 * max));
        }
    }

    #[test]
    fn subinterval_grams() {
        let b = basis(2.0, 7, 3);
        let full = b.gram_matrix();
        let mut sum = DMatrix::zeros(b.size(), b.size());
        for j in 1..=7 {
            let w = b.subinterval_gram(j).unwrap();
            for u in 0..b.size() {
                for v in 0..b.size() {
                    let inside = u + 1 >= j && u < j + 4 && v + 1 >= j && v < j + 4;
                    if !inside {
                        assert_eq!(w[(u, v)], 0.0);
                    }
                }
            }
            let ones = DVector::from_element(b.size(), 1.0);
            let q = (ones.transpose() * &w * &ones)[(0, 0)];
            assert!((q - 2.0 / 7.0).abs() < 1e-13);
            sum += w;
        }
        assert!((sum - full).abs().max() < 1e-14);
    }

    #[test]
    fn piecewise_constant_subinterval_gram() {
        let b = basis(1.0, 4, 0);
        for j in 1..=4 {
            let w = b.subinterval_gram(j).unwrap();
            for u in 0..4 {
                for v in 0..4 {
                    let want = if u == j - 1 && v == j - 1 { 0.25 } else { 0.0 };
                    assert!((w[(u, v)] - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn subinterval_norms() {
        let b = basis(1.0, 2, 3);
        let zero = SplineFunction::zero(b.clone());
        assert_eq!(zero.l2_norm_on_subinterval(1).unwrap(), 0.0);
        let ident = SplineFunction::new(b.clone(), b.greville()).unwrap();
        let got = ident.l2_norm_on_subinterval(1).unwrap();
        assert!((got - (1.0f64 / 24.0).sqrt()).abs() < 1e-14);
        let one = SplineFunction::new(b.clone(), vec![1.0; b.size()]).unwrap();
        assert!((one.l2_norm_on_subinterval(2).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!(one.l2_norm_on_subinterval(3).is_err());
    }

    #[test]
    fn design_matrix_cases() {
        let b = basis(1.0, 10, 3);
        let grid: Vec<f64> = (0..2001).map(|i| i as f64 / 2000.0).collect();
        let mut curves = DMatrix::zeros(3, grid.len());
        for (k, &t) in grid.iter().enumerate() {
            curves[(1, k)] = 1.0;
            curves[(2, k)] = b.eval(t, 0).unwrap()[5];
        }
        let u = b.design_matrix(&curves, &grid).unwrap();
        assert!(u.row(0).iter().all(|&x| x == 0.0));
        assert!((u.row(1).sum() - 1.0).abs() < 1e-12);
        let gram = b.gram_matrix();
        assert!((u[(2, 5)] - gram[(5, 5)]).abs() < 1e-6);

        assert!(b.design_matrix(&curves, &[0.0, 0.5]).is_err());
        let mut unsorted = grid.clone();
        unsorted.swap(3, 4);
        assert!(b.design_matrix(&curves, &unsorted).is_err());
    }

    #[test]
    fn design_matrix_general_domain() {
        let b = BSplineBasis::on_interval(850.0, 1050.0, 20, 3).unwrap();
        let grid: Vec<f64> = (0..401).map(|i| 850.0 + 0.5 * i as f64).collect();
        let curves = DMatrix::from_element(1, grid.len(), 1.0);
        let u = b.design_matrix(&curves, &grid).unwrap();
        assert!((u.row(0).sum() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn sq_integral_matches_subinterval_sum() {
        let b = basis(1.0, 6, 3);
        let f = SplineFunction::project(b.clone(), |t| (3.0 * t).cos() + t);
        let total: f64 = (0..6).map(|j| f.subinterval_sq_norm(j)).sum();
        assert!((f.sq_integral(0.0, 1.0) - total).abs() < 1e-13);
        let split = f.sq_integral(0.0, 0.37) + f.sq_integral(0.37, 1.0);
        assert!((split - total).abs() < 1e-13);
    }
}
