//! Knot-count heuristic, effective degrees of freedom, selection criteria and
//! grid search over `(γ, λ)`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Curves, FunctionalData};
use crate::error::{invalid, Result, SlosError};
use crate::io::{fmt_f64, Table};
use crate::quadrature::trapezoid_weights;
use crate::scad::subinterval_magnitudes;
use crate::solver::{build_problem, fit_problem, FitConfig, FitResult, Predictor, Problem};

/// `M = max(50, [20 n^{1/4}])` with `[x]` the nearest integer.
pub fn m_heuristic(n: usize) -> usize {
    let raw = (20.0 * (n as f64).powf(0.25)).round() as usize;
    raw.max(50)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Bic,
    Aic,
    Gcv,
    /// k-fold cross-validation.
    Cv(usize),
}

impl std::str::FromStr for Criterion {
    type Err = SlosError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "bic" => Ok(Criterion::Bic),
            "aic" => Ok(Criterion::Aic),
            "gcv" => Ok(Criterion::Gcv),
            "cv" => Ok(Criterion::Cv(5)),
            other => match other.strip_prefix("cv") {
                Some(k) => k
                    .trim_matches(|c| c == '(' || c == ')' || c == '-' || c == '_')
                    .parse()
                    .map(Criterion::Cv)
                    .map_err(|_| SlosError::InvalidArgument(format!("unknown criterion {s:?}"))),
                None => Err(SlosError::InvalidArgument(format!("unknown criterion {s:?}"))),
            },
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Criterion::Bic => write!(f, "bic"),
            Criterion::Aic => write!(f, "aic"),
            Criterion::Gcv => write!(f, "gcv"),
            Criterion::Cv(k) => write!(f, "cv{k}"),
        }
    }
}

/// Trace of the hat matrix of the final LQA system, sparsity weights
/// included. `fit.df` follows `FitConfig::df_rule` instead.
pub fn degrees_of_freedom(fit: &FitResult) -> f64 {
    fit.system.hat_trace()
}

fn floored_rss(rss: f64, responses: &nalgebra::DVector<f64>) -> f64 {
    let n = responses.len() as f64;
    let mean = responses.mean();
    let var = responses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    rss.max(1e-12 * var * n).max(f64::MIN_POSITIVE)
}

/// BIC, AIC or GCV from a residual sum of squares and effective df.
pub fn information_score(rss: f64, df: f64, n: usize, criterion: Criterion) -> f64 {
    let nf = n as f64;
    if !(df < nf) || !df.is_finite() {
        return f64::INFINITY;
    }
    match criterion {
        Criterion::Bic => nf * (rss / nf).ln() + nf.ln() * df,
        Criterion::Aic => nf * (rss / nf).ln() + 2.0 * df,
        Criterion::Gcv => (rss / nf) / (1.0 - df / nf).powi(2),
        Criterion::Cv(_) => f64::NAN,
    }
}

/// Held-out mean squared error over `k` folds; sample `i` goes to fold `i % k`.
pub fn cv_score(data: &FunctionalData, config: &FitConfig, k: usize) -> Result<f64> {
    let folds = CvFolds::new(data, config, k)?;
    folds.score(config)
}

/// Precomputed fold problems, reused across a tuning grid.
pub(crate) struct CvFolds {
    folds: Vec<(Arc<Problem>, FunctionalData)>,
    n: usize,
}

impl CvFolds {
    pub(crate) fn new(data: &FunctionalData, config: &FitConfig, k: usize) -> Result<Self> {
        let n = data.len();
        if k < 2 || k > n {
            return invalid(format!("cannot split {n} samples into {k} folds"));
        }
        let full = build_problem(data, config)?;
        let basis = full.block_basis(0).clone();
        let lead = usize::from(config.fit_intercept);
        let design = full.design().columns(lead, basis.size()).into_owned();
        let mut folds = Vec::with_capacity(k);
        for f in 0..k {
            let train: Vec<usize> = (0..n).filter(|i| i % k != f).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % k == f).collect();
            let problem = Problem::from_designs(
                vec![(basis.clone(), design.select_rows(&train), config.deriv_order)],
                data.responses.select_rows(&train),
                config.fit_intercept,
            )?;
            folds.push((Arc::new(problem), data.select(&test)));
        }
        Ok(Self { folds, n })
    }

    pub(crate) fn score(&self, config: &FitConfig) -> Result<f64> {
        let mut sse = 0.0;
        for (problem, held_out) in &self.folds {
            let fit = fit_problem(problem, config)?;
            let pred = fit.predict(&held_out.curves)?;
            sse += (&held_out.responses - pred).norm_squared();
        }
        Ok(sse / self.n as f64)
    }
}

/// Criterion value of a fit. CV refits `fit.config` on each fold.
pub fn score(fit: &FitResult, data: &FunctionalData, criterion: Criterion) -> Result<f64> {
    match criterion {
        Criterion::Cv(k) => cv_score(data, &fit.config, k),
        _ => {
            let rss = floored_rss(fit.rss, &data.responses);
            Ok(information_score(rss, fit.df, data.len(), criterion))
        }
    }
}

pub(crate) fn fit_score(fit: &FitResult, criterion: Criterion) -> f64 {
    let rss = floored_rss(fit.rss, fit.system.problem().responses());
    information_score(rss, fit.df, fit.num_samples(), criterion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub gamma_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub criterion: Criterion,
}

pub fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

impl TuningGrid {
    pub fn new(mut gamma_values: Vec<f64>, mut lambda_values: Vec<f64>, criterion: Criterion) -> Result<Self> {
        if gamma_values.is_empty() || lambda_values.is_empty() {
            return invalid("tuning grids must be nonempty");
        }
        if gamma_values
            .iter()
            .chain(&lambda_values)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return invalid("tuning values must be finite and non-negative");
        }
        gamma_values.sort_by(f64::total_cmp);
        lambda_values.sort_by(f64::total_cmp);
        Ok(Self {
            gamma_values,
            lambda_values,
            criterion,
        })
    }

    /// Default grid: 8 values of `γ` log-spaced over `[1e-8, 1e-1]` in units of
    /// [`gamma_scale`], and 10 values of `λ` over
    /// `[1e-4, 1] · ŝ` with `ŝ` the largest `c_j` of the least-smoothed fit.
    pub fn default_for(data: &FunctionalData, template: &FitConfig, criterion: Criterion) -> Result<Self> {
        Self::default_for_sizes(data, template, criterion, 8, 10)
    }

    /// The default grid with a chosen number of points along each axis.
    pub fn default_for_sizes(
        data: &FunctionalData,
        template: &FitConfig,
        criterion: Criterion,
        gamma_points: usize,
        lambda_points: usize,
    ) -> Result<Self> {
        if gamma_points == 0 || lambda_points == 0 {
            return invalid("tuning grids must be nonempty");
        }
        let problem = build_problem(data, template)?;
        let scale = gamma_scale(&data.curves, template.deriv_order);
        let gamma_values: Vec<f64> = log_space(1e-8, 1e-1, gamma_points)
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let smooth = template.clone().with_gamma(gamma_values[0]).with_lambda(0.0)?;
        let fit = fit_problem(&problem, &smooth)?;
        let s_hat = subinterval_magnitudes(&fit.beta_hat).into_iter().fold(0.0, f64::max);
        let s_hat = if s_hat > 0.0 { s_hat } else { 1.0 };
        let lambda_values = log_space(1e-4, 1.0, lambda_points)
            .into_iter()
            .map(|l| l * s_hat)
            .collect();
        Self::new(gamma_values, lambda_values, criterion)
    }

    pub fn len(&self) -> usize {
        self.gamma_values.len() * self.lambda_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.gamma_values
            .iter()
            .flat_map(|&g| self.lambda_values.iter().map(move |&l| (g, l)))
            .collect()
    }
}

/// Unit in which `γ` grids are expressed: `T^{2m+1}` times the mean of
/// `(1/T)∫X_i²`. Rescaling the domain or the covariates leaves the
/// best grid point unchanged, and on `[0, 1]` with unit-variance covariates
/// the unit is 1.
pub fn gamma_scale(curves: &Curves, deriv_order: usize) -> f64 {
    let (a, b) = curves.domain();
    let t = b - a;
    let w = trapezoid_weights(curves.grid());
    let x = curves.values();
    let energy: f64 = (0..x.nrows())
        .map(|i| x.row(i).iter().zip(&w).map(|(v, wk)| wk * v * v).sum::<f64>())
        .sum::<f64>()
        / (x.nrows() as f64 * t);
    let unit = t.powi(2 * deriv_order as i32 + 1) * energy;
    if unit > 0.0 && unit.is_finite() {
        unit
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub gamma: f64,
    pub lambda: f64,
    pub score: f64,
    pub df: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["gamma", "lambda", "score", "df", "converged"]);
        for r in &self.rows {
            t.push(vec![
                fmt_f64(r.gamma),
                fmt_f64(r.lambda),
                fmt_f64(r.score),
                fmt_f64(r.df),
                r.converged.to_string(),
            ]);
        }
        t
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.to_table().write(writer, None)
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best_config: FitConfig,
    pub best_fit: FitResult,
    pub table: ScoreTable,
}

/// Lower score wins; ties go to larger `λ`, then larger `γ`.
fn better(a: &ScoreRow, b: &ScoreRow) -> bool {
    let tol = 1e-12 * a.score.abs().max(b.score.abs()).max(1e-300);
    if (a.score - b.score).abs() > tol {
        return a.score < b.score;
    }
    if a.lambda != b.lambda {
        return a.lambda > b.lambda;
    }
    a.gamma > b.gamma
}

/// Fits every `(γ, λ)` pair of the grid and keeps the best by criterion.
pub fn grid_search(data: &FunctionalData, grid: &TuningGrid, template: &FitConfig) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return invalid("tuning grid is empty");
    }
    let problem = build_problem(data, template)?;
    let folds = match grid.criterion {
        Criterion::Cv(k) => Some(CvFolds::new(data, template, k)?),
        _ => None,
    };
    let evaluated: Vec<(ScoreRow, Option<FitResult>)> = grid
        .points()
        .into_par_iter()
        .map(|(gamma, lambda)| {
            let config = match template.clone().with_gamma(gamma).with_lambda(lambda) {
                Ok(c) => c,
                Err(_) => return (failed_row(gamma, lambda), None),
            };
            let fit = match fit_problem(&problem, &config) {
                Ok(f) => f,
                Err(_) => return (failed_row(gamma, lambda), None),
            };
            let score = match &folds {
                Some(f) => f.score(&config).unwrap_or(f64::INFINITY),
                None => fit_score(&fit, grid.criterion),
            };
            let row = ScoreRow {
                gamma,
                lambda,
                score,
                df: fit.df,
                converged: fit.converged,
            };
            (row, Some(fit))
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (row, fit)) in evaluated.iter().enumerate() {
        if fit.is_none() || !row.converged || !row.score.is_finite() {
            continue;
        }
        if best.is_none_or(|b| better(row, &evaluated[b].0)) {
            best = Some(i);
        }
    }
    let table = ScoreTable {
        rows: evaluated.iter().map(|(r, _)| *r).collect(),
    };
    let best = best.ok_or_else(|| {
        SlosError::NoValidConfiguration(format!("none of {} grid points produced a converged fit", grid.len()))
    })?;
    let best_fit = evaluated
        .into_iter()
        .nth(best)
        .and_then(|(_, f)| f)
        .expect("best index has a fit");
    Ok(GridSearchOutcome {
        best_config: best_fit.config.clone(),
        best_fit,
        table,
    })
}

fn failed_row(gamma: f64, lambda: f64) -> ScoreRow {
    ScoreRow {
        gamma,
        lambda,
        score: f64::INFINITY,
        df: f64::NAN,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heuristic_values() {
        assert_eq!(m_heuristic(150), 70);
        assert_eq!(m_heuristic(1), 50);
        assert_eq!(m_heuristic(215), 77);
        assert_eq!(m_heuristic(35), 50);
    }

    #[test]
    fn criteria_monotone_in_df() {
        for c in [Criterion::Bic, Criterion::Aic, Criterion::Gcv] {
            assert!(information_score(3.0, 4.0, 100, c) < information_score(3.0, 6.0, 100, c));
        }
        assert_eq!(information_score(3.0, 100.0, 100, Criterion::Bic), f64::INFINITY);
    }

    #[test]
    fn rss_floor_guards_saturated_fits() {
        let y = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let r = floored_rss(0.0, &y);
        assert!((r - 1e-12 * 1.25 * 4.0).abs() < 1e-24);
        assert!(information_score(r, 2.0, 4, Criterion::Bic).is_finite());
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("BIC".parse::<Criterion>().unwrap(), Criterion::Bic);
        assert_eq!("cv".parse::<Criterion>().unwrap(), Criterion::Cv(5));
        assert_eq!("cv10".parse::<Criterion>().unwrap(), Criterion::Cv(10));
        assert!("ric".parse::<Criterion>().is_err());
    }

    #[test]
    fn ties_prefer_sparser_then_smoother() {
        let a = ScoreRow {
            gamma: 1.0,
            lambda: 2.0,
            score: 5.0,
            df: 1.0,
            converged: true,
        };
        let b = ScoreRow {
            gamma: 3.0,
            lambda: 1.0,
            score: 5.0,
            df: 1.0,
            converged: true,
        };
        assert!(better(&a, &b));
        let c = ScoreRow {
            gamma: 3.0,
            lambda: 2.0,
            ..a
        };
        assert!(better(&c, &a));
    }
}
