//! Reference estimators: OLS, smoothing spline, and the oracle that places
//! knots only where the true coefficient function is nonzero.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bspline::{weighted_curves, BSplineBasis, SplineFunction};
use crate::data::FunctionalData;
use crate::error::{invalid, Result, SlosError};
use crate::scad::ScadParams;
use crate::solver::{
    fit, run_engine, BlockPenalty, CoefficientFunction, FitConfig, FitResult, IterationControl, PinRule, Predictor,
    Problem,
};
use crate::tuning::{fit_score, gamma_scale, log_space, Criterion};

/// Disjoint closed subintervals where the true `β` vanishes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NullRegionSpec {
    intervals: Vec<(f64, f64)>,
}

impl NullRegionSpec {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals
            .iter()
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return invalid("null-region intervals must be finite with start < end");
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        if intervals.windows(2).any(|w| w[1].0 <= w[0].1) {
            return invalid("null-region intervals must be disjoint");
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| t >= a && t <= b)
    }

    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn check_domain(&self, domain: (f64, f64)) -> Result<()> {
        let tol = 1e-12 * (domain.1 - domain.0);
        if self
            .intervals
            .iter()
            .any(|&(a, b)| a < domain.0 - tol || b > domain.1 + tol)
        {
            return invalid("null region extends beyond the domain");
        }
        Ok(())
    }

    /// Connected components of the non-null region inside `domain`.
    pub fn complement(&self, domain: (f64, f64)) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut cursor = domain.0;
        for &(a, b) in &self.intervals {
            if a > cursor {
                out.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < domain.1 {
            out.push((cursor, domain.1));
        }
        out
    }
}

/// Ordinary least squares in the spline space.
pub fn fit_ols(data: &FunctionalData, num_subintervals: usize, degree: usize) -> Result<FitResult> {
    let config = FitConfig::new(num_subintervals).with_degree(degree);
    fit(data, &config)
}

/// Roughness-penalized least squares.
pub fn fit_smooth(data: &FunctionalData, num_subintervals: usize, degree: usize, gamma: f64) -> Result<FitResult> {
    let config = FitConfig::new(num_subintervals).with_degree(degree).with_gamma(gamma);
    fit(data, &config)
}

/// Oracle estimate: one spline per non-null component, zero elsewhere.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub pieces: Vec<SplineFunction>,
    pub null_region: NullRegionSpec,
    pub mu_hat: f64,
    pub num_knots: usize,
    pub gamma: f64,
    pub rss: f64,
    pub df: f64,
}

impl CoefficientFunction for OracleFit {
    fn beta(&self, t: f64) -> f64 {
        if self.null_region.contains(t) {
            return 0.0;
        }
        self.pieces
            .iter()
            .find(|p| p.basis().contains(t))
            .map_or(0.0, |p| p.value(t))
    }
}

impl Predictor for OracleFit {
    fn intercept(&self) -> f64 {
        self.mu_hat
    }
}

struct OracleDesign {
    bases: Vec<BSplineBasis>,
    blocks: Vec<DMatrix<f64>>,
}

fn oracle_design(
    data: &FunctionalData,
    null_region: &NullRegionSpec,
    num_knots: usize,
    degree: usize,
) -> Result<OracleDesign> {
    let domain = data.curves.domain();
    null_region.check_domain(domain)?;
    let components = null_region.complement(domain);
    if components.is_empty() {
        return invalid("non-null region is empty");
    }
    if num_knots == 0 {
        return invalid("oracle needs at least one subinterval");
    }
    let support: f64 = components.iter().map(|(a, b)| b - a).sum();
    let grid = data.curves.grid();
    let xw = weighted_curves(data.curves.values(), grid);
    let mut bases = Vec::with_capacity(components.len());
    let mut blocks = Vec::with_capacity(components.len());
    for (a, b) in components {
        let m = ((num_knots as f64 * (b - a) / support).round() as usize).max(1);
        let basis = BSplineBasis::on_interval(a, b, m, degree)?;
        let mut coll = basis.collocation(grid);
        for (r, &t) in grid.iter().enumerate() {
            if null_region.contains(t) {
                coll.row_mut(r).fill(0.0);
            }
        }
        blocks.push(&xw * coll);
        bases.push(basis);
    }
    Ok(OracleDesign { bases, blocks })
}

fn oracle_control() -> IterationControl {
    IterationControl {
        max_iterations: 1,
        convergence_tol: 1e-6,
        shrink: Default::default(),
        pin_rule: PinRule::Subinterval,
    }
}

fn oracle_penalties(count: usize, gamma: f64) -> Vec<BlockPenalty> {
    let scad = ScadParams::with_lambda(0.0).expect("zero lambda is valid");
    vec![
        BlockPenalty {
            gamma,
            scad,
            periodic: false,
        };
        count
    ]
}

fn oracle_problem(
    design: &OracleDesign,
    rows: Option<&[usize]>,
    responses: &nalgebra::DVector<f64>,
    m: usize,
) -> Result<Problem> {
    let parts = design
        .bases
        .iter()
        .zip(&design.blocks)
        .map(|(basis, u)| {
            let u = match rows {
                Some(r) => u.select_rows(r),
                None => u.clone(),
            };
            (basis.clone(), u, m.min(basis.degree()))
        })
        .collect();
    let y = match rows {
        Some(r) => responses.select_rows(r),
        None => responses.clone(),
    };
    Problem::from_designs(parts, y, true)
}

/// Fits the oracle with `num_knots` subintervals spread over the non-null
/// region in proportion to component length.
pub fn fit_oracle(
    data: &FunctionalData,
    null_region: &NullRegionSpec,
    num_knots: usize,
    degree: usize,
    gamma: f64,
) -> Result<OracleFit> {
    let design = oracle_design(data, null_region, num_knots, degree)?;
    let problem = Arc::new(oracle_problem(&design, None, &data.responses, 2)?);
    let engine = run_engine(&problem, &oracle_penalties(design.bases.len(), gamma), oracle_control())?;
    let rss = engine.rss();
    let df = engine.system.hat_trace();
    let pieces = design
        .bases
        .iter()
        .enumerate()
        .map(|(k, basis)| SplineFunction::new(basis.clone(), engine.block_coefficients(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleFit {
        pieces,
        null_region: null_region.clone(),
        mu_hat: engine.mu(),
        num_knots,
        gamma,
        rss,
        df,
    })
}

/// OLS with degree and knot count chosen by an information criterion.
pub fn select_ols(
    data: &FunctionalData,
    degrees: &[usize],
    knots: &[usize],
    criterion: Criterion,
) -> Result<FitResult> {
    let candidates: Vec<(usize, usize)> = degrees
        .iter()
        .flat_map(|&d| knots.iter().map(move |&m| (d, m)))
        .filter(|&(d, m)| m + d + 1 < data.len())
        .collect();
    let fits: Vec<(f64, FitResult)> = candidates
        .into_par_iter()
        .filter_map(|(d, m)| fit_ols(data, m, d).ok())
        .map(|f| (fit_score(&f, criterion), f))
        .collect();
    best_of(fits, "OLS")
}

/// Smoothing spline with knot count and `γ` chosen by an information criterion.
pub fn select_smooth(
    data: &FunctionalData,
    knots: &[usize],
    gamma_points: usize,
    criterion: Criterion,
) -> Result<FitResult> {
    let mut fits = Vec::new();
    for &m in knots {
        let config = FitConfig::new(m);
        let problem = crate::solver::build_problem(data, &config)?;
        let scale = gamma_scale(&data.curves, config.deriv_order);
        let found: Vec<(f64, FitResult)> = log_space(1e-8, 1e-1, gamma_points)
            .into_par_iter()
            .filter_map(|g| crate::solver::fit_problem(&problem, &config.clone().with_gamma(g * scale)).ok())
            .map(|f| (fit_score(&f, criterion), f))
            .collect();
        fits.extend(found);
    }
    best_of(fits, "smoothing spline")
}

fn best_of(fits: Vec<(f64, FitResult)>, what: &str) -> Result<FitResult> {
    fits.into_iter()
        .filter(|(s, _)| s.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, f)| f)
        .ok_or_else(|| SlosError::NoValidConfiguration(format!("no {what} candidate could be fitted")))
}

/// Oracle with knot count and `γ` chosen by `k`-fold cross-validation.
pub fn select_oracle(
    data: &FunctionalData,
    null_region: &NullRegionSpec,
    knots: &[usize],
    gamma_points: usize,
    folds: usize,
) -> Result<OracleFit> {
    let n = data.len();
    if folds < 2 || folds > n {
        return invalid(format!("cannot split {n} samples into {folds} folds"));
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for &m in knots {
        let design = oracle_design(data, null_region, m, 3)?;
        let full = oracle_problem(&design, None, &data.responses, 2)?;
        let scale = gamma_scale(&data.curves, 2);
        let splits: Vec<(Arc<Problem>, DMatrix<f64>, nalgebra::DVector<f64>)> = (0..folds)
            .map(|f| {
                let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
                let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
                let problem = Arc::new(oracle_problem(&design, Some(&train), &data.responses, 2)?);
                Ok((
                    problem,
                    full.design().select_rows(&test),
                    data.responses.select_rows(&test),
                ))
            })
            .collect::<Result<_>>()?;
        let scores: Vec<(f64, f64)> = log_space(1e-8, 1e-1, gamma_points)
            .into_par_iter()
            .map(|g| {
                let gamma = g * scale;
                let penalties = oracle_penalties(design.bases.len(), gamma);
                let mut sse = 0.0;
                for (problem, test_u, test_y) in &splits {
                    match run_engine(problem, &penalties, oracle_control()) {
                        Ok(e) => sse += (test_y - test_u * &e.coefficients).norm_squared(),
                        Err(_) => return (f64::INFINITY, gamma),
                    }
                }
                (sse / n as f64, gamma)
            })
            .collect();
        for (score, gamma) in scores {
            if score.is_finite() && best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, m, gamma));
            }
        }
    }
    let (_, m, gamma) =
        best.ok_or_else(|| SlosError::NoValidConfiguration("no oracle candidate could be fitted".into()))?;
    fit_oracle(data, null_region, m, 3, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Curves;
    use crate::quadrature::trapezoid_weights;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed: u64) -> FunctionalData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let gen = BSplineBasis::new(1.0, 20, 4).unwrap();
        let a = DMatrix::from_fn(n, gen.size(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = a * gen.collocation(&grid).transpose();
        let w = trapezoid_weights(&grid);
        let beta = |t: f64| {
            if (0.3..=0.7).contains(&t) {
                0.0
            } else {
                (t - 0.5).powi(2) * 10.0
            }
        };
        let y = DVector::from_fn(n, |i, _| {
            (0..grid.len()).map(|k| w[k] * x[(i, k)] * beta(grid[k])).sum::<f64>()
                + 0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        FunctionalData::new(Curves::on_grid(grid, x).unwrap(), y).unwrap()
    }

    #[test]
    fn null_region_validation_and_complement() {
        assert!(NullRegionSpec::new(vec![(0.2, 0.1)]).is_err());
        assert!(NullRegionSpec::new(vec![(0.1, 0.4), (0.3, 0.5)]).is_err());
        let r = NullRegionSpec::new(vec![(0.6, 0.8), (0.0, 0.2)]).unwrap();
        assert_eq!(r.complement((0.0, 1.0)), vec![(0.2, 0.6), (0.8, 1.0)]);
        assert!((r.length() - 0.4).abs() < 1e-15);
        assert!(r.contains(0.2) && r.contains(0.7) && !r.contains(0.5));
    }

    #[test]
    fn oracle_is_zero_on_null_region() {
        let d = data(150, 1);
        let null = NullRegionSpec::new(vec![(0.3, 0.7)]).unwrap();
        let fit = fit_oracle(&d, &null, 20, 3, 1e-9).unwrap();
        for k in 0..=400 {
            let t = 0.3 + 0.001 * k as f64;
            assert_eq!(fit.beta(t), 0.0);
        }
        assert!(fit.beta(0.1).abs() > 0.0);
    }

    #[test]
    fn oracle_with_empty_null_region_is_smooth_fit() {
        let d = data(120, 2);
        let oracle = fit_oracle(&d, &NullRegionSpec::empty(), 15, 3, 1e-8).unwrap();
        let smooth = fit_smooth(&d, 15, 3, 1e-8).unwrap();
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            assert!((oracle.beta(t) - smooth.beta_hat.value(t)).abs() < 1e-9);
        }
        assert!((oracle.mu_hat - smooth.mu_hat).abs() < 1e-10);
    }

    #[test]
    fn oracle_rejects_full_null_region() {
        let d = data(40, 3);
        let null = NullRegionSpec::new(vec![(0.0, 1.0)]).unwrap();
        assert!(fit_oracle(&d, &null, 10, 3, 1e-6).is_err());
    }

    #[test]
    fn ols_delegates_and_checks_rank() {
        let d = data(60, 4);
        let a = fit_ols(&d, 10, 3).unwrap();
        let b = fit(&d, &FitConfig::new(10)).unwrap();
        assert_eq!(a.beta_hat.coefficients(), b.beta_hat.coefficients());
        assert!(fit_ols(&data(12, 5), 15, 3).is_err());
    }

    #[test]
    fn very_large_gamma_gives_linear_fit() {
        let d = data(200, 6);
        let fit = fit_smooth(&d, 10, 3, 1e8).unwrap();
        let v = fit.beta_hat.basis().penalty_matrix(2).unwrap();
        let b = DVector::from_column_slice(fit.beta_hat.coefficients());
        let rough = (b.transpose() * v * &b)[(0, 0)];
        assert!(rough < 1e-6, "{rough}");
    }
}
