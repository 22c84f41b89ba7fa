//! Synthetic data with known coefficient functions, accuracy metrics, and a
//! Monte Carlo study runner comparing the estimators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{select_ols, select_oracle, select_smooth, NullRegionSpec};
use crate::bspline::BSplineBasis;
use crate::data::{Curves, FunctionalData};
use crate::error::{invalid, Result, SlosError};
use crate::io::{fmt_f64, Table};
use crate::quadrature::trapezoid_weights;
use crate::solver::{CoefficientFunction, FitConfig, Predictor};
use crate::tuning::{grid_search, m_heuristic, Criterion, TuningGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    /// `β ≡ 0`.
    I,
    /// Zero on `[0.3, 0.7]`, sinusoidal bumps either side.
    II,
    /// Nowhere zero.
    III,
}

impl Case {
    pub fn beta(self, t: f64) -> f64 {
        match self {
            Case::I => 0.0,
            Case::II => {
                if t <= 0.3 {
                    2.0 * (1.0 - t) * (2.0 * PI * (t + 0.2)).sin()
                } else if t < 0.7 {
                    0.0
                } else {
                    2.0 * t * (2.0 * PI * (t - 0.2)).sin()
                }
            }
            Case::III => 4.0 * t.powi(3) + 2.0 * (4.0 * PI * t + 0.2).sin(),
        }
    }

    pub fn null_region(self) -> NullRegionSpec {
        let intervals = match self {
            Case::I => vec![(0.0, 1.0)],
            Case::II => vec![(0.3, 0.7)],
            Case::III => vec![],
        };
        NullRegionSpec::new(intervals).expect("fixed regions are valid")
    }
}

impl FromStr for Case {
    type Err = SlosError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.strip_prefix("case").unwrap_or(&t).trim_start_matches(['_', '-', ' ']);
        match t {
            "i" | "1" => Ok(Case::I),
            "ii" | "2" => Ok(Case::II),
            "iii" | "3" => Ok(Case::III),
            _ => Err(SlosError::InvalidArgument(format!("unknown case {s:?}"))),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        };
        f.write_str(s)
    }
}

/// The true coefficient function of a case.
pub fn true_beta(case: Case) -> impl Fn(f64) -> f64 + Copy + Send + Sync {
    move |t| case.beta(t)
}

pub fn uniform_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return invalid("grid needs at least two points");
    }
    Ok((0..points).map(|k| k as f64 / (points - 1) as f64).collect())
}

/// Random curves `X(t) = Σ_j a_j B_j(t)` with `a_j` standard normal and a
/// degree-4 basis on 70 equal subintervals of `[0, 1]` (74 functions).
#[derive(Debug, Clone)]
pub struct CovariateModel {
    basis: BSplineBasis,
    grid: Vec<f64>,
    collocation_t: DMatrix<f64>,
}

impl CovariateModel {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        Self::with_basis(grid, BSplineBasis::new(1.0, 70, 4)?)
    }

    pub fn with_basis(grid: Vec<f64>, basis: BSplineBasis) -> Result<Self> {
        crate::bspline::validate_grid(&grid)?;
        if grid[0] < basis.domain_start() || grid[grid.len() - 1] > basis.domain_end() {
            return invalid("covariate grid must lie in the basis domain");
        }
        let collocation_t = basis.collocation(&grid).transpose();
        Ok(Self {
            basis,
            grid,
            collocation_t,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn from_coefficients(&self, a: &DMatrix<f64>) -> Result<Curves> {
        if a.ncols() != self.basis.size() {
            return invalid("coefficient matrix width must match the basis size");
        }
        let domain = (self.basis.domain_start(), self.basis.domain_end());
        Curves::new(self.grid.clone(), domain, a * &self.collocation_t)
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Curves> {
        if n == 0 {
            return invalid("need at least one curve");
        }
        let a = DMatrix::from_fn(n, self.basis.size(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.from_coefficients(&a)
    }
}

pub fn gen_covariates<R: Rng>(n: usize, grid: &[f64], rng: &mut R) -> Result<Curves> {
    CovariateModel::new(grid.to_vec())?.sample(n, rng)
}

/// `∫ X_i β` by the trapezoid rule on the curves' grid.
pub fn signal(curves: &Curves, beta: impl Fn(f64) -> f64) -> DVector<f64> {
    let grid = curves.grid();
    let w = trapezoid_weights(grid);
    let wb = DVector::from_iterator(grid.len(), grid.iter().zip(&w).map(|(&t, &wk)| wk * beta(t)));
    curves.values() * wb
}

/// `Y = μ + ∫Xβ + σε` with a given noise level.
pub fn responses_with_sigma<R: Rng>(
    curves: &Curves,
    beta: impl Fn(f64) -> f64,
    mu: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid("noise level must be finite and non-negative");
    }
    let s = signal(curves, beta);
    Ok(DVector::from_iterator(
        s.len(),
        s.iter()
            .map(|&si| mu + si + sigma * rng.sample::<f64, _>(StandardNormal)),
    ))
}

/// Responses with `σ = 1` for Case I and `σ = sd(signal)/√snr` otherwise.
/// Returns the responses and the noise level used.
pub fn gen_responses<R: Rng>(
    curves: &Curves,
    beta: impl Fn(f64) -> f64,
    mu: f64,
    case: Case,
    snr: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    if !(snr > 0.0 && snr.is_finite()) {
        return invalid("signal-to-noise ratio must be positive");
    }
    let s = signal(curves, &beta);
    let sigma = match case {
        Case::I => 1.0,
        _ => {
            if s.len() < 2 {
                return invalid("need two curves to estimate the signal variance");
            }
            let sd = s.variance().sqrt() * (s.len() as f64 / (s.len() - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return invalid("signal has zero variance, noise level undefined");
            }
            sd / snr.sqrt()
        }
    };
    let y = DVector::from_iterator(
        s.len(),
        s.iter()
            .map(|&si| mu + si + sigma * rng.sample::<f64, _>(StandardNormal)),
    );
    Ok((y, sigma))
}

/// Trapezoid integral of `f` on `points` equally spaced nodes of `[a, b]`.
fn integrate(a: f64, b: f64, points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / (points - 1) as f64;
    let inner: f64 = (1..points - 1).map(|k| f(a + h * k as f64)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

const ISE_POINTS: usize = 2001;

/// Length-normalized integrated squared errors on the null and non-null regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IseMetrics {
    pub null: Option<f64>,
    pub nonnull: Option<f64>,
}

pub fn ise_metrics(
    beta_hat: &dyn CoefficientFunction,
    beta_true: &dyn Fn(f64) -> f64,
    null_region: &NullRegionSpec,
    domain: (f64, f64),
) -> Result<IseMetrics> {
    null_region.check_domain(domain)?;
    let err = |t: f64| (beta_hat.beta(t) - beta_true(t)).powi(2);
    let region = |intervals: &[(f64, f64)]| {
        let len: f64 = intervals.iter().map(|(a, b)| b - a).sum();
        if len <= 0.0 {
            return None;
        }
        let total: f64 = intervals.iter().map(|&(a, b)| integrate(a, b, ISE_POINTS, err)).sum();
        Some(total / len)
    };
    let null = region(null_region.intervals());
    let nonnull = region(&null_region.complement(domain));
    if null.is_none() && nonnull.is_none() {
        return invalid("both regions are empty");
    }
    Ok(IseMetrics { null, nonnull })
}

/// Mean squared prediction error on held-out data.
pub fn pmse(model: &dyn Predictor, test: &FunctionalData) -> Result<f64> {
    if test.is_empty() {
        return invalid("test set is empty");
    }
    let pred = model.predict(&test.curves)?;
    Ok((&test.responses - pred).norm_squared() / test.len() as f64)
}

/// Fraction of the points `a, a+step, …, b` of each null interval where
/// `β̂` is exactly zero.
pub fn null_proportion(beta_hat: &dyn CoefficientFunction, null_region: &NullRegionSpec, step: f64) -> Result<f64> {
    if null_region.is_empty() {
        return invalid("null region is empty");
    }
    if !(step > 0.0) {
        return invalid("step must be positive");
    }
    let mut zeros = 0usize;
    let mut total = 0usize;
    for &(a, b) in null_region.intervals() {
        let count = ((b - a) / step + 1e-9).floor() as usize;
        for k in 0..=count {
            let t = (a + step * k as f64).min(b);
            total += 1;
            if beta_hat.beta(t) == 0.0 {
                zeros += 1;
            }
        }
    }
    Ok(zeros as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub case: Case,
    pub n: usize,
    pub test_n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub mu_true: f64,
    pub snr: f64,
    pub grid_size: usize,
}

impl ScenarioConfig {
    pub fn new(case: Case, n: usize, replicates: usize, seed: u64) -> Self {
        Self {
            case,
            n,
            test_n: 5000,
            replicates,
            seed,
            mu_true: 1.0,
            snr: 4.0,
            grid_size: 101,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        if self.n < 2 || self.test_n == 0 {
            return invalid("need at least two training samples and one test sample");
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return invalid("snr must be positive");
        }
        if self.grid_size < 2 {
            return invalid("grid needs at least two points");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Oracle,
    Ols,
    Smooth,
    Slos,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Oracle, Method::Ols, Method::Smooth, Method::Slos];
}

impl FromStr for Method {
    type Err = SlosError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(Method::Oracle),
            "ols" => Ok(Method::Ols),
            "smooth" => Ok(Method::Smooth),
            "slos" => Ok(Method::Slos),
            _ => Err(SlosError::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Oracle => "oracle",
            Method::Ols => "ols",
            Method::Smooth => "smooth",
            Method::Slos => "slos",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Pmse,
    Ise0,
    Ise1,
    NullProportion,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Pmse => "pmse",
            Metric::Ise0 => "ise0",
            Metric::Ise1 => "ise1",
            Metric::NullProportion => "null_proportion",
        };
        f.write_str(s)
    }
}

/// Tuning choices for each method in a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub slos_criterion: Criterion,
    /// `None` uses the knot-count heuristic.
    pub slos_subintervals: Option<usize>,
    pub slos_template: Option<FitConfig>,
    pub baseline_criterion: Criterion,
    pub ols_degrees: Vec<usize>,
    pub ols_knots: Vec<usize>,
    pub smooth_knots: Vec<usize>,
    pub oracle_knots: Vec<usize>,
    pub oracle_folds: usize,
    pub gamma_points: usize,
    pub lambda_points: usize,
    pub null_step: f64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            slos_criterion: Criterion::Bic,
            slos_subintervals: None,
            slos_template: None,
            baseline_criterion: Criterion::Aic,
            ols_degrees: vec![2, 3, 4, 5],
            ols_knots: vec![3, 5, 8, 12, 16, 20],
            smooth_knots: vec![10, 20, 40, 70],
            oracle_knots: vec![10, 20, 30, 40, 50],
            oracle_folds: 5,
            gamma_points: 8,
            lambda_points: 10,
            null_step: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub method: Method,
    pub metric: Metric,
    pub replicate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation; zero for a single replicate.
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub case: Case,
    pub n: usize,
    pub replicates: usize,
    /// Replicates excluded because some method failed on them.
    pub failed: Vec<usize>,
    pub observations: Vec<Observation>,
}

impl StudyReport {
    pub fn values(&self, method: Method, metric: Metric) -> Vec<f64> {
        self.observations
            .iter()
            .filter(|o| o.method == method && o.metric == metric)
            .map(|o| o.value)
            .collect()
    }

    pub fn mean(&self, method: Method, metric: Metric) -> Option<f64> {
        let v = self.values(method, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, Metric)> = self.observations.iter().map(|o| (o.method, o.metric)).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(method, metric)| {
                let v = self.values(method, metric);
                let count = v.len();
                let mean = v.iter().sum::<f64>() / count as f64;
                let sd = if count > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    method,
                    metric,
                    mean,
                    sd,
                    count,
                }
            })
            .collect()
    }

    pub fn long_table(&self) -> Table {
        let mut t = Table::new(["case", "n", "method", "metric", "replicate", "value"]);
        for o in &self.observations {
            t.push(vec![
                self.case.to_string(),
                self.n.to_string(),
                o.method.to_string(),
                o.metric.to_string(),
                o.replicate.to_string(),
                fmt_f64(o.value),
            ]);
        }
        t
    }

    /// One row per method and metric, in the layout of a results table.
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(["case", "n", "method", "metric", "mean", "sd", "replicates"]);
        for r in self.summary() {
            t.push(vec![
                self.case.to_string(),
                self.n.to_string(),
                r.method.to_string(),
                r.metric.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.sd),
                r.count.to_string(),
            ]);
        }
        t
    }
}

/// Stream keys for the two independent random sources of a replicate.
#[derive(Debug, Clone, Copy)]
enum Role {
    Train = 0,
    Test = 1,
}

fn rng_for(seed: u64, replicate: usize, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * replicate as u64 + role as u64);
    rng
}

/// Train and test sets of one replicate.
pub fn replicate_data(
    scenario: &ScenarioConfig,
    model: &CovariateModel,
    replicate: usize,
) -> Result<(FunctionalData, FunctionalData)> {
    let beta = true_beta(scenario.case);
    let mut train_rng = rng_for(scenario.seed, replicate, Role::Train);
    let x = model.sample(scenario.n, &mut train_rng)?;
    let (y, sigma) = gen_responses(&x, beta, scenario.mu_true, scenario.case, scenario.snr, &mut train_rng)?;
    let mut test_rng = rng_for(scenario.seed, replicate, Role::Test);
    let xt = model.sample(scenario.test_n, &mut test_rng)?;
    let yt = responses_with_sigma(&xt, beta, scenario.mu_true, sigma, &mut test_rng)?;
    Ok((FunctionalData::new(x, y)?, FunctionalData::new(xt, yt)?))
}

fn methods_for(case: Case, methods: &[Method]) -> Vec<Method> {
    let mut out: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|&m| m != Method::Oracle || case == Case::II)
        .collect();
    out.sort();
    out.dedup();
    out
}

fn evaluate(
    method: Method,
    model: &(dyn Predictor + Sync),
    scenario: &ScenarioConfig,
    test: &FunctionalData,
    step: f64,
    replicate: usize,
    out: &mut Vec<Observation>,
) -> Result<()> {
    let null = scenario.case.null_region();
    let beta = true_beta(scenario.case);
    let mut push = |metric, value: f64| -> Result<()> {
        if !value.is_finite() {
            return Err(SlosError::InvalidArgument(format!(
                "{method} produced a non-finite {metric}"
            )));
        }
        out.push(Observation {
            method,
            metric,
            replicate,
            value,
        });
        Ok(())
    };
    push(Metric::Pmse, pmse(model, test)?)?;
    let ise = ise_metrics(model, &beta, &null, (0.0, 1.0))?;
    if let Some(v) = ise.null {
        push(Metric::Ise0, v)?;
    }
    if let Some(v) = ise.nonnull {
        push(Metric::Ise1, v)?;
    }
    if !null.is_empty() {
        push(Metric::NullProportion, null_proportion(model, &null, step)?)?;
    }
    Ok(())
}

/// SLoS with `(γ, λ)` chosen on the default grid.
pub fn tuned_slos(data: &FunctionalData, settings: &StudySettings) -> Result<crate::solver::FitResult> {
    let m = settings.slos_subintervals.unwrap_or_else(|| m_heuristic(data.len()));
    let template = match &settings.slos_template {
        Some(t) => FitConfig {
            num_subintervals: m,
            ..t.clone()
        },
        None => FitConfig::new(m),
    };
    let grid = TuningGrid::default_for_sizes(
        data,
        &template,
        settings.slos_criterion,
        settings.gamma_points,
        settings.lambda_points,
    )?;
    Ok(grid_search(data, &grid, &template)?.best_fit)
}

fn run_replicate(
    scenario: &ScenarioConfig,
    model: &CovariateModel,
    methods: &[Method],
    settings: &StudySettings,
    replicate: usize,
) -> Result<Vec<Observation>> {
    let (train, test) = replicate_data(scenario, model, replicate)?;
    let mut out = Vec::new();
    for &method in methods {
        let step = settings.null_step;
        match method {
            Method::Slos => {
                let fit = tuned_slos(&train, settings)?;
                evaluate(method, &fit, scenario, &test, step, replicate, &mut out)?;
            }
            Method::Smooth => {
                let fit = select_smooth(
                    &train,
                    &settings.smooth_knots,
                    settings.gamma_points,
                    settings.baseline_criterion,
                )?;
                evaluate(method, &fit, scenario, &test, step, replicate, &mut out)?;
            }
            Method::Ols => {
                let fit = select_ols(
                    &train,
                    &settings.ols_degrees,
                    &settings.ols_knots,
                    settings.baseline_criterion,
                )?;
                evaluate(method, &fit, scenario, &test, step, replicate, &mut out)?;
            }
            Method::Oracle => {
                let null = scenario.case.null_region();
                let fit = select_oracle(
                    &train,
                    &null,
                    &settings.oracle_knots,
                    settings.gamma_points,
                    settings.oracle_folds,
                )?;
                evaluate(method, &fit, scenario, &test, step, replicate, &mut out)?;
            }
        }
    }
    Ok(out)
}

/// Runs every replicate of a scenario. Replicates on which any method fails
/// are excluded from the report; more than 20% failures is an error.
pub fn run_study(scenario: &ScenarioConfig, methods: &[Method], settings: &StudySettings) -> Result<StudyReport> {
    scenario.validate()?;
    let methods = methods_for(scenario.case, methods);
    if methods.is_empty() {
        return invalid("no applicable methods for this case");
    }
    let model = CovariateModel::new(uniform_grid(scenario.grid_size)?)?;
    let results: Vec<Result<Vec<Observation>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &model, &methods, settings, r))
        .collect();
    let mut failed = Vec::new();
    let mut observations = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(obs) => observations.extend(obs),
            Err(_) => failed.push(r),
        }
    }
    if failed.len() * 5 > scenario.replicates {
        return Err(SlosError::StudyFailed {
            failed: failed.len(),
            total: scenario.replicates,
        });
    }
    Ok(StudyReport {
        case: scenario.case,
        n: scenario.n,
        replicates: scenario.replicates,
        failed,
        observations,
    })
}
